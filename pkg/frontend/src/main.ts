/** Browser entry point: mount the session against the same origin the
 * page was served from. */

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";

const root = document.getElementById("app");
if (root) {
  const controller = new SessionController(new ApiClient(""), root);
  controller.start().catch((err) => {
    root.textContent =
      "Could not start the session: " +
      (err instanceof Error ? err.message : String(err));
  });
}
