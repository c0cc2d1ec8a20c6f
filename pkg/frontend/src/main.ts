import { makeApi } from "./api.js";
import { initApp } from "./app.js";

// Same-origin deployment: the gateway serves this bundle under /ui and the
// API under /api/v1, so a relative base works from either mount point.
initApp(document, makeApi(""));
