import { PanelClient } from "./client.js";
import { PanelStore } from "./store.js";
import { PanelUI } from "./ui.js";

function defaultWsUrl(): string {
  const fromQuery = new URLSearchParams(location.search).get("ws");
  if (fromQuery) return fromQuery;
  const host = location.hostname || "127.0.0.1";
  return `ws://${host}:7001`;
}

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const header = document.createElement("div");
header.className = "wsbar";
const input = document.createElement("input");
input.value = defaultWsUrl();
input.spellcheck = false;
const button = document.createElement("button");
button.textContent = "reconnect";
header.append(input, button);
root.appendChild(header);

const store = new PanelStore();
let client = new PanelClient(input.value, store);
const ui = new PanelUI(root, store, (event) => client.send(event));
ui.start();
client.connect();

button.addEventListener("click", () => {
  client.dispose();
  client = new PanelClient(input.value, store);
  client.connect();
});
