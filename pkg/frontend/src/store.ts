/** UI state and transitions, framework-free so the contract tests run
 * headlessly against a mocked API.
 *
 * Rules enforced here rather than in the DOM layer:
 *  - at most one pending message; sends while pending are rejected locally
 *  - optimistic user bubble that settles (or errors) with the reply
 *  - an expired session (404) is re-created once and the send retried
 *  - after every settled exchange the transcript must mirror the server's
 *    history; on mismatch it reconciles via GET /history
 */

import { ApiError, ChatApi, DecodeControls, MAX_NEW_TOKENS_CAP } from "./api.js";

export interface Bubble {
  speaker: "user" | "bot";
  text: string;
  pending: boolean;
  failed?: boolean;
}

export interface UiState {
  sessionId: string | null;
  transcript: Bubble[];
  decode: DecodeControls;
  errorBanner: string | null;
  connecting: boolean;
}

export const DEFAULT_DECODE: DecodeControls = {
  strategy: "top_k",
  top_k: 40,
  temperature: 0.9,
};

type Listener = (state: UiState) => void;

export class ChatStore {
  private state: UiState = {
    sessionId: null,
    transcript: [],
    decode: { ...DEFAULT_DECODE },
    errorBanner: null,
    connecting: false,
  };
  private listeners: Listener[] = [];
  private lastFailedText: string | null = null;

  constructor(private api: ChatApi) {}

  getState(): UiState {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private update(patch: Partial<UiState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) {
      fn(this.state);
    }
  }

  get pending(): boolean {
    return this.state.transcript.some((b) => b.pending);
  }

  async startSession(): Promise<boolean> {
    this.update({ connecting: true, errorBanner: null });
    try {
      const { session_id } = await this.api.createSession();
      this.update({
        sessionId: session_id,
        transcript: [],
        errorBanner: null,
        connecting: false,
      });
      return true;
    } catch (e) {
      this.update({
        sessionId: null,
        connecting: false,
        errorBanner: e instanceof ApiError ? `service unavailable (${e.code})` : "service unreachable",
      });
      return false;
    }
  }

  setDecodeControls(patch: Partial<DecodeControls>): void {
    const next = { ...this.state.decode, ...patch };
    // mirror the server caps; out-of-range values never leave the client
    if (next.top_k < 1) next.top_k = 1;
    if (next.temperature <= 0) next.temperature = 0.1;
    if (next.max_new_tokens !== undefined) {
      next.max_new_tokens = Math.min(Math.max(1, next.max_new_tokens), MAX_NEW_TOKENS_CAP);
    }
    this.update({ decode: next });
  }

  /** Send a message. Returns false if rejected locally (pending/empty/no
   * session) without issuing any request. */
  async sendMessage(text: string): Promise<boolean> {
    if (!text.trim() || this.state.sessionId === null || this.pending) {
      return false;
    }
    this.lastFailedText = null;
    this.update({
      transcript: [...this.state.transcript, { speaker: "user", text, pending: true }],
      errorBanner: null,
    });
    return this.settle(text, true);
  }

  /** Retry the last failed send, reusing its (already rendered) bubble. */
  async resendLast(): Promise<boolean> {
    const text = this.lastFailedText;
    if (text === null || this.pending || this.state.sessionId === null) {
      return false;
    }
    this.lastFailedText = null;
    const transcript = [...this.state.transcript];
    const last = transcript[transcript.length - 1];
    if (last?.failed) {
      transcript[transcript.length - 1] = { speaker: "user", text, pending: true };
      this.update({ transcript, errorBanner: null });
    }
    return this.settle(text, true);
  }

  private async settle(text: string, allowRecreate: boolean): Promise<boolean> {
    try {
      const res = await this.api.postMessage(this.state.sessionId!, text, this.state.decode);
      const transcript = [...this.state.transcript];
      const idx = transcript.findIndex((b) => b.pending);
      transcript[idx] = { speaker: "user", text, pending: false };
      transcript.push({ speaker: "bot", text: res.reply, pending: false });
      this.update({ transcript });
      await this.reconcile();
      return true;
    } catch (e) {
      if (e instanceof ApiError && e.status === 404 && allowRecreate) {
        // session expired server-side: re-create and retry once
        try {
          const { session_id } = await this.api.createSession();
          this.update({
            sessionId: session_id,
            errorBanner: "session expired; started a new one",
          });
          return this.settle(text, false);
        } catch {
          // fall through to the failure path below
        }
      }
      const transcript = [...this.state.transcript];
      const idx = transcript.findIndex((b) => b.pending);
      if (idx >= 0) {
        transcript[idx] = { speaker: "user", text, pending: false, failed: true };
      }
      this.lastFailedText = text;
      this.update({
        transcript,
        errorBanner: e instanceof ApiError ? `send failed (${e.code})` : "send failed (network)",
      });
      return false;
    }
  }

  /** Settled transcripts must mirror the server history; fetch and replace
   * on any divergence. */
  private async reconcile(): Promise<void> {
    if (this.state.sessionId === null) return;
    const local = this.state.transcript;
    try {
      const { turns } = await this.api.getHistory(this.state.sessionId);
      const matches =
        turns.length === local.length &&
        turns.every((t, i) => local[i].speaker === t.speaker && local[i].text === t.text);
      if (!matches) {
        this.update({
          transcript: turns.map((t) => ({ speaker: t.speaker, text: t.text, pending: false })),
        });
      }
    } catch {
      // reconciliation is best-effort; the optimistic transcript stands
    }
  }
}
