// Home page: one card per accessible feed, controls for tagging and
// bookmarking, and the ⊕ activity chooser (PACS query/retrieve).

import { Api, ApiError, StudyRowJson } from "./api.js";
import { toCard } from "./models.js";

export interface ViewHandle {
  stop(): void;
}

export function renderHome(
  container: HTMLElement,
  api: Api,
  openFeed: (feedId: number) => void,
  onAuthError: () => void,
  pollIntervalMs = 2000,
): ViewHandle {
  container.innerHTML = `
    <section>
      <div class="toolbar">
        <h2>My feeds</h2>
        <button id="new-activity" title="new activity">⊕</button>
      </div>
      <div id="activity-area" hidden></div>
      <div id="card-grid" class="card-grid"></div>
      <div id="home-error" class="error" hidden></div>
    </section>`;

  const grid = container.querySelector<HTMLElement>("#card-grid")!;
  const errorBox = container.querySelector<HTMLElement>("#home-error")!;
  let stopped = false;

  async function refresh(): Promise<void> {
    if (stopped) return;
    let feeds;
    try {
      feeds = await api.feeds();
    } catch (err) {
      if (err instanceof ApiError && err.status === 401) {
        onAuthError();
        return;
      }
      errorBox.hidden = false;
      errorBox.textContent = String(err);
      return;
    }
    if (stopped) return;
    errorBox.hidden = true;
    grid.replaceChildren(...feeds.map((feed) => renderCard(feed)));
  }

  function renderCard(feedJson: Parameters<typeof toCard>[0]): HTMLElement {
    const card = toCard(feedJson);
    const el = document.createElement("div");
    el.className = "card";
    el.dataset.feedId = String(card.feedId);
    el.innerHTML = `
      <div class="thumb">${card.thumbnail}</div>
      <div class="card-title"></div>
      <div class="card-meta">by <span class="owner"></span> ·
        <span class="badge status-${card.rollup}">${card.rollup}</span>
        · ${card.nodeCount} node(s)</div>
      <div class="tags"></div>
      <div class="card-actions">
        <button class="open">open</button>
        <button class="bookmark">${card.bookmarked ? "★" : "☆"}</button>
        <button class="add-tag">tag</button>
      </div>`;
    el.querySelector(".card-title")!.textContent = card.title;
    el.querySelector(".owner")!.textContent = card.owner;
    el.querySelector(".tags")!.replaceChildren(...card.tags.map((tag) => {
      const chip = document.createElement("span");
      chip.className = "chip";
      chip.textContent = tag;
      return chip;
    }));
    el.querySelector(".open")!.addEventListener("click", () => openFeed(card.feedId));
    el.querySelector(".bookmark")!.addEventListener("click", async () => {
      await api.annotate(card.feedId, "BOOKMARK");
      await refresh(); // re-render from the server's answer, never locally
    });
    el.querySelector(".add-tag")!.addEventListener("click", async () => {
      const text = window.prompt("tag name");
      if (text) {
        await api.annotate(card.feedId, "ADD_TAG", text);
        await refresh();
      }
    });
    return el;
  }

  // -- ⊕ activity chooser ------------------------------------------------------

  const activityArea = container.querySelector<HTMLElement>("#activity-area")!;
  container.querySelector("#new-activity")!.addEventListener("click", () => {
    activityArea.hidden = !activityArea.hidden;
    if (!activityArea.hidden) {
      renderActivityChooser();
    }
  });

  function renderActivityChooser(): void {
    activityArea.innerHTML = `
      <div class="activity">
        <h3>New activity</h3>
        <button id="act-pacs">PACS Query/Retrieve</button>
        <div id="pacs-activity"></div>
      </div>`;
    activityArea.querySelector("#act-pacs")!.addEventListener("click", () => {
      renderPacsActivity(activityArea.querySelector<HTMLElement>("#pacs-activity")!);
    });
  }

  function renderPacsActivity(area: HTMLElement): void {
    area.innerHTML = `
      <form id="pacs-form" class="pacs-form">
        <label>Modality <input name="Modality" placeholder="MR"></label>
        <label>PatientSex <input name="PatientSex"></label>
        <label>StudyDate <input name="StudyDate" placeholder="YYYYMMDD-YYYYMMDD"></label>
        <label>StudyDescription <input name="StudyDescription" placeholder="*MRI*"></label>
        <button type="submit">Query</button>
      </form>
      <div id="pacs-results"></div>`;
    const form = area.querySelector<HTMLFormElement>("#pacs-form")!;
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      const filters: Record<string, string> = {};
      for (const input of Array.from(form.querySelectorAll("input"))) {
        if (input.value.trim()) {
          filters[input.name] = input.value.trim();
        }
      }
      const resultBox = area.querySelector<HTMLElement>("#pacs-results")!;
      try {
        const studies = await api.pacsQuery(filters);
        renderStudyTable(resultBox, studies);
      } catch (err) {
        resultBox.innerHTML = `<div class="error"></div>`;
        resultBox.querySelector(".error")!.textContent = String(err);
      }
    });
  }

  function renderStudyTable(box: HTMLElement, studies: StudyRowJson[]): void {
    if (studies.length === 0) {
      box.innerHTML = `<p class="empty">No matching studies.</p>`;
      return;
    }
    const table = document.createElement("table");
    table.className = "study-table";
    table.innerHTML = `
      <thead><tr><th>date</th><th>description</th><th>sex</th><th>age</th>
      <th>series</th><th></th></tr></thead>`;
    const body = document.createElement("tbody");
    for (const study of studies) {
      const row = document.createElement("tr");
      row.dataset.studyUid = study.study_uid;
      const series = study.series
        .map((s) => `${s.modality}×${s.instance_count}`)
        .join(", ");
      row.innerHTML = `
        <td>${study.study_date}</td><td class="desc"></td>
        <td>${study.patient_sex}</td><td>${study.patient_age}</td>
        <td>${series}</td><td><button class="pull">pull</button></td>`;
      row.querySelector(".desc")!.textContent = study.description;
      row.querySelector(".pull")!.addEventListener("click", async () => {
        const button = row.querySelector<HTMLButtonElement>(".pull")!;
        button.disabled = true;
        button.textContent = "pulling…";
        try {
          await api.pacsPull(study.study_uid, study.description);
          await refresh(); // the new card appears from the server's truth
          button.textContent = "pulled";
        } catch (err) {
          button.textContent = "failed";
          button.title = String(err);
        }
      });
      body.appendChild(row);
    }
    table.appendChild(body);
    box.replaceChildren(table);
  }

  void refresh();
  const timer = setInterval(refresh, pollIntervalMs);
  return {
    stop() {
      stopped = true;
      clearInterval(timer);
    },
  };
}
