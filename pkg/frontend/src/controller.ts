/** Session state machine: one stimulus at a time, rating gated on playback.
 *
 * Guarantees surfaced to the UI layer:
 * - a rating can only be submitted after playback started, with an integer
 *   score in 0..5;
 * - rapid double submissions collapse into one: the phase leaves "rating"
 *   on the first call and the backend's duplicate rejection is treated as
 *   "already counted, move on".
 */

import {
  ApiError,
  DuplicateRatingError,
  isDone,
  Stimulus,
  SurveyApi,
} from "./api.js";

export type Phase = "idle" | "loading" | "rating" | "submitting" | "done" | "error";

export interface UiSessionState {
  phase: Phase;
  sessionId: string | null;
  stimulus: Stimulus | null;
  index: number;
  total: number;
  playbackStarted: boolean;
  error: string | null;
}

export const SCORES = [0, 1, 2, 3, 4, 5] as const;

export class SurveyController {
  state: UiSessionState = {
    phase: "idle",
    sessionId: null,
    stimulus: null,
    index: 0,
    total: 0,
    playbackStarted: false,
    error: null,
  };

  private listeners: Array<(state: UiSessionState) => void> = [];

  constructor(
    private readonly api: SurveyApi,
    private readonly listenerId: string,
  ) {}

  onChange(listener: (state: UiSessionState) => void): void {
    this.listeners.push(listener);
  }

  private update(patch: Partial<UiSessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  async start(): Promise<void> {
    this.update({ phase: "loading", error: null });
    try {
      const session = await this.api.createSession(this.listenerId);
      this.update({ sessionId: session.session_id, total: session.total });
      await this.advance();
    } catch (err) {
      this.update({ phase: "error", error: String(err) });
    }
  }

  /** Resume an existing session (e.g. after a reload). */
  async resume(sessionId: string): Promise<void> {
    this.update({ phase: "loading", sessionId, error: null });
    try {
      await this.advance();
    } catch (err) {
      this.update({ phase: "error", error: String(err) });
    }
  }

  private async advance(): Promise<void> {
    if (!this.state.sessionId) {
      throw new Error("no session");
    }
    const next = await this.api.nextStimulus(this.state.sessionId);
    if (isDone(next)) {
      this.update({ phase: "done", stimulus: null, index: this.state.total });
      return;
    }
    this.update({
      phase: "rating",
      stimulus: next,
      index: next.index,
      total: next.total,
      playbackStarted: false,
    });
  }

  notePlaybackStarted(): void {
    if (this.state.phase === "rating") {
      this.update({ playbackStarted: true });
    }
  }

  canRate(): boolean {
    return this.state.phase === "rating" && this.state.playbackStarted;
  }

  /** Submit a rating and move to the next stimulus; no-ops unless allowed. */
  async rate(score: number): Promise<void> {
    if (!Number.isInteger(score) || score < 0 || score > 5) {
      throw new RangeError(`score must be an integer in 0..5, got ${score}`);
    }
    if (!this.canRate() || !this.state.stimulus || !this.state.sessionId) {
      return; // double click or rating before playback: ignore
    }
    const { sessionId, stimulus } = this.state;
    this.update({ phase: "submitting" });
    try {
      await this.api.submitRating(sessionId, stimulus.utterance_id, score);
    } catch (err) {
      if (!(err instanceof DuplicateRatingError)) {
        this.update({
          phase: "error",
          error: err instanceof ApiError ? err.message : String(err),
        });
        return;
      }
      // duplicate: already stored, just move forward
    }
    try {
      await this.advance();
    } catch (err) {
      this.update({ phase: "error", error: String(err) });
    }
  }

  async retry(): Promise<void> {
    if (this.state.sessionId) {
      await this.resume(this.state.sessionId);
    } else {
      await this.start();
    }
  }
}
