/** DOM layer: renders the controller state and wires the audio/rating controls. */

import { SurveyApi } from "./api.js";
import { SCORES, SurveyController, UiSessionState } from "./controller.js";

const ANCHOR_LOW = "cannot hear the specified emotion";
const ANCHOR_HIGH = "perfectly hear the specified emotion";

export function mountSurvey(root: HTMLElement, api: SurveyApi, controller: SurveyController): void {
  root.innerHTML = `
    <div class="banner" hidden>
      <span class="banner-text"></span>
      <button class="retry">Retry</button>
    </div>
    <div class="survey" hidden>
      <p class="progress"></p>
      <p class="instruction">
        Listen to the clip, then rate your confidence that it expresses the
        emotion <strong class="emotion"></strong> (0 = ${ANCHOR_LOW},
        5 = ${ANCHOR_HIGH}).
      </p>
      <audio class="player" controls></audio>
      <div class="scores"></div>
    </div>
    <div class="completion" hidden>
      <h2>All done</h2>
      <p>Thank you for taking part in the listening test.</p>
    </div>
    <p class="loading">Loading…</p>
  `;

  const banner = root.querySelector<HTMLElement>(".banner")!;
  const bannerText = root.querySelector<HTMLElement>(".banner-text")!;
  const survey = root.querySelector<HTMLElement>(".survey")!;
  const completion = root.querySelector<HTMLElement>(".completion")!;
  const loading = root.querySelector<HTMLElement>(".loading")!;
  const progress = root.querySelector<HTMLElement>(".progress")!;
  const emotionLabel = root.querySelector<HTMLElement>(".emotion")!;
  const player = root.querySelector<HTMLAudioElement>(".player")!;
  const scoresBox = root.querySelector<HTMLElement>(".scores")!;

  const buttons: HTMLButtonElement[] = SCORES.map((score) => {
    const button = document.createElement("button");
    button.className = "score";
    button.dataset.score = String(score);
    button.textContent =
      score === 0 ? `0 — ${ANCHOR_LOW}` : score === 5 ? `5 — ${ANCHOR_HIGH}` : String(score);
    button.addEventListener("click", () => void controller.rate(score));
    scoresBox.appendChild(button);
    return button;
  });

  player.addEventListener("play", () => controller.notePlaybackStarted());
  root.querySelector<HTMLButtonElement>(".retry")!
    .addEventListener("click", () => void controller.retry());

  controller.onChange((state: UiSessionState) => {
    loading.hidden = state.phase !== "loading";
    banner.hidden = state.phase !== "error";
    survey.hidden = !(state.phase === "rating" || state.phase === "submitting");
    completion.hidden = state.phase !== "done";
    if (state.phase === "error") {
      bannerText.textContent = `Backend unavailable (${state.error}).`;
      return;
    }
    if (state.stimulus) {
      progress.textContent = `${state.index + 1} / ${state.total}`;
      emotionLabel.textContent = state.stimulus.emotion;
      const src = api.audioUrl(state.stimulus);
      if (player.src !== src) {
        player.src = src;
      }
    }
    const enabled = controller.canRate();
    for (const button of buttons) {
      button.disabled = !enabled;
    }
  });
}
