/** Browser bootstrap: wires the session to the DOM.
 *
 * Configuration comes from the query string:
 *   index.html?service=http://127.0.0.1:8765&rater=alice&break=30
 */

import { QcApiClient } from "./api.js";
import { renderBreakNotice, renderEmptyPool, renderProgress, renderRatingCard, renderVerdictCard } from "./render.js";
import { BreakActiveError, RaterSession } from "./session.js";
import type { DimensionName, RatingWord } from "./types.js";

function requireElement(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

function start(): void {
  const params = new URLSearchParams(window.location.search);
  const service = params.get("service") ?? "http://127.0.0.1:8765";
  const rater = params.get("rater") ?? "anonymous";
  const breakMinutes = Number(params.get("break") ?? "30");

  const api = new QcApiClient(service);
  const session = new RaterSession(api, rater, { breakMinutes });
  const app = requireElement("app");

  const redraw = (): void => {
    if (session.verdict) {
      app.innerHTML = renderVerdictCard(session.verdict, session.history);
      return;
    }
    const batch = session.batch;
    if (!batch || batch.batch_id === null) {
      app.innerHTML = renderEmptyPool();
      return;
    }
    const cards = batch.instances
      .map((view) =>
        renderRatingCard(view, session.draftFor(view.instance_id), session.isMediaFailed(view.instance_id)),
      )
      .join("\n");
    app.innerHTML = renderProgress(session.progress(), session.canSubmit()) + cards;
  };

  const nextBatch = async (skipBreak = false): Promise<void> => {
    try {
      await session.fetchNextBatch({ skipBreak });
    } catch (err) {
      if (err instanceof BreakActiveError) {
        app.innerHTML = renderBreakNotice(err.msRemaining);
        return;
      }
      app.innerHTML = `<div class="error">${String(err)} <button data-action="retry-fetch">Retry</button></div>`;
      return;
    }
    redraw();
  };

  app.addEventListener("change", (event) => {
    const input = event.target as HTMLInputElement;
    if (input.type !== "radio" || !input.dataset.instance) return;
    session.rate(input.dataset.instance, input.dataset.dimension as DimensionName, input.value as RatingWord);
    const progress = requireElement("app").querySelector(".progress");
    if (progress) progress.outerHTML = renderProgress(session.progress(), session.canSubmit());
  });

  app.addEventListener(
    "error",
    (event) => {
      const el = event.target as HTMLElement;
      const instance = el?.dataset?.instance;
      if (instance && (el.tagName === "IMG" || el.tagName === "VIDEO")) {
        session.markMediaFailed(instance);
        redraw();
      }
    },
    true,
  );

  app.addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest("button");
    if (!button) return;
    switch (button.dataset.action) {
      case "submit":
        button.setAttribute("disabled", "disabled");
        session
          .submitBatch()
          .then(redraw)
          .catch((err) => {
            button.removeAttribute("disabled");
            window.alert(`Submission failed (${String(err)}); your ratings are kept, try again.`);
          });
        break;
      case "next-batch":
        void nextBatch();
        break;
      case "skip-break":
        void nextBatch(true);
        break;
      case "retry-fetch":
        void nextBatch();
        break;
    }
  });

  void nextBatch();
}

document.addEventListener("DOMContentLoaded", start);
