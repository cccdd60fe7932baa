import { App } from "./app.js";

const base = window.location.pathname.startsWith("/ui")
  ? window.location.origin
  : "http://127.0.0.1:9480";
new App(base).mount(document.getElementById("app")!);
