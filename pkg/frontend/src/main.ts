import { GateUi } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
const server = new URLSearchParams(window.location.search).get("server") ?? "";
new GateUi(root, server);
