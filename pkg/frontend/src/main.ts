import { ApiClient } from "./api.js";
import { mountApp } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app root");
void mountApp(root, new ApiClient(""));
