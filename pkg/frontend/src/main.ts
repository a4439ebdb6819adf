/** DOM wiring for the chat page. All model output is rendered through
 * textContent, never innerHTML, so replies cannot inject markup. */

import { ChatApi, MAX_NEW_TOKENS_CAP } from "./api.js";
import { ChatStore, UiState } from "./store.js";

const params = new URLSearchParams(window.location.search);
const BASE_URL = params.get("api") ?? localStorage.getItem("coral_api_url") ?? "http://localhost:8080";

const api = new ChatApi(BASE_URL);
const store = new ChatStore(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const transcriptEl = el<HTMLDivElement>("transcript");
const inputEl = el<HTMLInputElement>("message-input");
const sendEl = el<HTMLButtonElement>("send");
const bannerEl = el<HTMLDivElement>("banner");
const retryEl = el<HTMLButtonElement>("retry");
const strategyEl = el<HTMLSelectElement>("decode-strategy");
const topKEl = el<HTMLInputElement>("decode-top-k");
const temperatureEl = el<HTMLInputElement>("decode-temperature");
const maxTokensEl = el<HTMLInputElement>("decode-max-tokens");

maxTokensEl.max = String(MAX_NEW_TOKENS_CAP);

function render(state: UiState): void {
  transcriptEl.replaceChildren(
    ...state.transcript.map((b) => {
      const div = document.createElement("div");
      div.className = `bubble ${b.speaker}${b.pending ? " pending" : ""}${b.failed ? " failed" : ""}`;
      div.textContent = b.text;
      if (b.failed) {
        const resend = document.createElement("button");
        resend.textContent = "resend";
        resend.onclick = () => void store.resendLast();
        div.appendChild(resend);
      }
      return div;
    }),
  );
  transcriptEl.scrollTop = transcriptEl.scrollHeight;

  const busy = state.connecting || store.pending || state.sessionId === null;
  inputEl.disabled = state.sessionId === null || state.connecting;
  sendEl.disabled = busy;

  bannerEl.hidden = state.errorBanner === null;
  bannerEl.firstChild!.textContent = state.errorBanner ?? "";
  retryEl.hidden = state.sessionId !== null;
}

store.subscribe(render);

async function send(): Promise<void> {
  const text = inputEl.value;
  const accepted = await store.sendMessage(text);
  if (accepted) {
    inputEl.value = "";
  }
  inputEl.focus();
}

sendEl.onclick = () => void send();
inputEl.onkeydown = (e) => {
  if (e.key === "Enter" && !sendEl.disabled) void send();
};
retryEl.onclick = () => void store.startSession();

function readDecodeControls(): void {
  store.setDecodeControls({
    strategy: strategyEl.value === "greedy" ? "greedy" : "top_k",
    top_k: Number(topKEl.value) || 40,
    temperature: Number(temperatureEl.value) || 0.9,
    max_new_tokens: Number(maxTokensEl.value) || undefined,
  });
}

for (const node of [strategyEl, topKEl, temperatureEl, maxTokensEl]) {
  node.onchange = readDecodeControls;
}

void store.startSession();
