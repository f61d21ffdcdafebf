/** Pure HTML renderers; no DOM access, so they test headlessly. */

import type { Progress } from "./session.js";
import { DIMENSIONS, RATING_WORDS, type Draft, type InstanceView, type Verdict } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function mediaTag(view: InstanceView): string {
  const sources = view.media.map(escapeHtml);
  if (view.kind === "video") {
    return `<video controls data-instance="${escapeHtml(view.instance_id)}" src="${sources[0] ?? ""}"></video>`;
  }
  return sources
    .map((src) => `<img data-instance="${escapeHtml(view.instance_id)}" src="${src}" alt="generated image">`)
    .join("");
}

export function renderRatingCard(view: InstanceView, draft: Draft, mediaFailed: boolean): string {
  const id = escapeHtml(view.instance_id);
  const media = mediaFailed
    ? `<p class="media-error">Media failed to load; this instance is flagged and cannot be rated.</p>`
    : mediaTag(view);
  const fieldsets = DIMENSIONS.map((dimension) => {
    const label = dimension === "quality" ? "Visual quality" : "Alignment";
    const inputs = RATING_WORDS.map((word, i) => {
      const score = i + 1;
      const checked = draft[dimension] === score ? " checked" : "";
      const disabled = mediaFailed ? " disabled" : "";
      return (
        `<label><input type="radio" name="${id}:${dimension}" value="${word}"` +
        `${checked}${disabled} data-instance="${id}" data-dimension="${dimension}"> ${word}</label>`
      );
    }).join("\n      ");
    return `  <fieldset class="rate-${dimension}">\n    <legend>${label}</legend>\n      ${inputs}\n  </fieldset>`;
  }).join("\n");
  return (
    `<section class="rating-card${mediaFailed ? " flagged" : ""}" data-instance="${id}">\n` +
    `  ${media}\n` +
    `  <p class="prompt">${escapeHtml(view.prompt)}</p>\n` +
    `${fieldsets}\n` +
    `</section>`
  );
}

export function renderProgress(progress: Progress, canSubmit: boolean): string {
  const note = canSubmit
    ? `<button class="submit" data-action="submit">Submit batch</button>`
    : `<button class="submit" data-action="submit" disabled>Submit batch</button>` +
      `<span class="remaining">${progress.missing} instance${progress.missing === 1 ? "" : "s"} left to rate</span>`;
  return `<div class="progress">${progress.rated} / ${progress.total} rated ${note}</div>`;
}

export function renderVerdictCard(verdict: Verdict, history: Verdict[]): string {
  const accepted = verdict.verdict === "accepted";
  const srcc = verdict.srcc === null ? "n/a" : verdict.srcc.toFixed(3);
  const acceptedCount = history.filter((v) => v.verdict === "accepted").length;
  const reason = verdict.reason ? `<p class="reason">${escapeHtml(verdict.reason)}</p>` : "";
  return (
    `<div class="verdict-card ${accepted ? "accepted" : "rejected"}">\n` +
    `  <h2>${accepted ? "Accepted" : "Rejected"}</h2>\n` +
    `  <p class="srcc">Agreement with reference scores: ${srcc}</p>\n` +
    reason +
    `  <p class="history">${acceptedCount} of ${history.length} batches accepted so far</p>\n` +
    `  <button data-action="next-batch">Start next batch</button>\n` +
    `</div>`
  );
}

export function renderBreakNotice(msRemaining: number): string {
  const minutes = Math.ceil(msRemaining / 60_000);
  return (
    `<div class="break-notice">Time for a break: next batch unlocks in about ${minutes} ` +
    `minute${minutes === 1 ? "" : "s"}. <button data-action="skip-break">Start anyway</button></div>`
  );
}

export function renderEmptyPool(): string {
  return `<div class="empty-pool">No instances left to rate right now. Thanks!</div>`;
}
