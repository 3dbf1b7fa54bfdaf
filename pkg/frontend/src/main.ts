import { ApiClient, ApiError } from "./api.js";
import { LabelingQueue } from "./labeler.js";
import { Poller } from "./poll.js";
import { conceptView, rationaleCards, roundRows, strategyRows } from "./render.js";
import { SCREENS, UiSession, screenFromHash, type Screen } from "./session.js";

const api = new ApiClient(localStorage.getItem("mc.server") ?? "http://127.0.0.1:8321");
const session = new UiSession();
let activePoller: Poller | null = null;
let activeKeyHandler: ((event: KeyboardEvent) => void) | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  text?: string,
  className?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (text !== undefined) {
    node.textContent = text;
  }
  if (className !== undefined) {
    node.className = className;
  }
  return node;
}

function root(): HTMLElement {
  return document.getElementById("app") as HTMLElement;
}

function setStatus(message: string, isError = false): void {
  const bar = document.getElementById("status") as HTMLElement;
  bar.textContent = message;
  bar.className = isError ? "status error" : "status";
}

function reportError(error: unknown): void {
  if (error instanceof ApiError) {
    setStatus(`${error.code}: ${error.message}`, true);
  } else {
    setStatus(String(error), true);
  }
}

function clearScreen(): void {
  if (activePoller !== null) {
    activePoller.stop();
    activePoller = null;
  }
  if (activeKeyHandler !== null) {
    document.removeEventListener("keydown", activeKeyHandler);
    activeKeyHandler = null;
  }
  root().replaceChildren();
}

async function drawProjectPicker(): Promise<void> {
  const nav = document.getElementById("projects") as HTMLElement;
  nav.replaceChildren();
  const { projects } = await api.listProjects();
  for (const projectId of projects) {
    const button = el("button", projectId);
    button.onclick = () => {
      session.selectProject(projectId);
      void draw();
    };
    nav.appendChild(button);
  }
}

async function drawConceptEditor(container: HTMLElement, projectId: string): Promise<void> {
  const summary = await api.projectSummary(projectId);
  session.lastSummary = summary;
  container.appendChild(el("h2", `Concept: ${summary.name}`));
  const textarea = el("textarea");
  textarea.rows = 8;
  textarea.value = summary.concept?.description ?? "";
  container.appendChild(textarea);
  const button = el("button", "Save & re-extract attributes");
  button.onclick = async () => {
    try {
      const { concept } = await api.describe(projectId, textarea.value || null);
      const view = conceptView(concept);
      attrs.replaceChildren(
        el("h3", "Attributes"),
        ...view.attributes.map((text) => el("li", text)),
        el("h3", "Carve-outs"),
        ...(view.carveOuts.length ? view.carveOuts : ["none"]).map((text) => el("li", text)),
      );
      setStatus("concept updated");
    } catch (error) {
      reportError(error);
    }
  };
  container.appendChild(button);
  const attrs = el("ul");
  if (summary.concept) {
    const view = conceptView(summary.concept);
    attrs.replaceChildren(
      el("h3", "Attributes"),
      ...view.attributes.map((text) => el("li", text)),
      el("h3", "Carve-outs"),
      ...(view.carveOuts.length ? view.carveOuts : ["none"]).map((text) => el("li", text)),
    );
  }
  container.appendChild(attrs);
}

async function drawValidationLabeler(container: HTMLElement, projectId: string): Promise<void> {
  const queue = await api.validationQueue(projectId);
  const labeler = new LabelingQueue(queue.items, (labels) =>
    api.submitValidationLabels(projectId, labels),
  );
  container.appendChild(el("h2", "Label the validation set"));
  container.appendChild(el("p", "keys: 1 = positive, 0 = negative, u = undo", "hint"));
  const progress = el("p", "", "progress");
  const frame = el("div", undefined, "image-frame");
  const image = el("img");
  image.alt = "validation image";
  frame.appendChild(image);
  container.append(progress, frame);

  const refresh = () => {
    const { labeled, total } = labeler.progress();
    progress.textContent = `${labeled} / ${total} labeled (${labeler.stagedCount()} staged)`;
    const item = labeler.current();
    if (item === null) {
      image.removeAttribute("src");
      frame.replaceChildren(el("p", labeler.done() ? "all labeled" : "flushing…"));
    } else {
      image.src = item.uri;
      frame.replaceChildren(image, el("p", item.image_id, "image-id"));
    }
  };

  activeKeyHandler = (event: KeyboardEvent) => {
    void labeler
      .handleKey(event.key)
      .then((handled) => {
        if (handled) {
          refresh();
        }
      })
      .catch(reportError);
  };
  document.addEventListener("keydown", activeKeyHandler);
  const flush = el("button", "Submit remaining");
  flush.onclick = () => labeler.flush().then(refresh).catch(reportError);
  container.appendChild(flush);
  refresh();
}

async function drawRationaleReview(container: HTMLElement, projectId: string): Promise<void> {
  container.appendChild(el("h2", "Annotator decisions"));
  const list = el("div", undefined, "cards");
  container.appendChild(list);
  let page = 1;

  const load = async () => {
    const data = await api.annotations(projectId, page, 10);
    list.replaceChildren();
    for (const card of rationaleCards(data.items)) {
      const box = el("div", undefined, `card ${card.kind} ${card.decision}`);
      box.appendChild(el("h3", `${card.imageId} — ${card.decision}`));
      if (card.caption !== null) {
        box.appendChild(el("p", `Caption: ${card.caption}`));
      }
      const qa = el("ul");
      for (const exchange of card.exchanges) {
        qa.appendChild(el("li", `Q: ${exchange.q} — A: ${exchange.a}`));
      }
      box.appendChild(qa);
      const reasons = el("ul", undefined, "reasons");
      for (const reason of card.reasons) {
        reasons.appendChild(el("li", reason));
      }
      box.appendChild(reasons);
      box.appendChild(el("p", `strategy ${card.strategy}`, "meta"));
      list.appendChild(box);
    }
    pager.textContent = `page ${data.page} of ${Math.max(1, Math.ceil(data.total / 10))}`;
  };

  const controls = el("div", undefined, "pager");
  const prev = el("button", "prev");
  const next = el("button", "next");
  const pager = el("span", "");
  prev.onclick = () => {
    page = Math.max(1, page - 1);
    void load().catch(reportError);
  };
  next.onclick = () => {
    page += 1;
    void load().catch(reportError);
  };
  controls.append(prev, pager, next);
  container.appendChild(controls);
  await load();
}

async function drawStrategyDashboard(container: HTMLElement, projectId: string): Promise<void> {
  container.appendChild(el("h2", "Annotation strategies"));
  const table = el("table");
  table.innerHTML = "<thead><tr><th>strategy</th><th>F1</th><th></th></tr></thead>";
  const body = el("tbody");
  table.appendChild(body);
  container.appendChild(table);

  const show = (data: Awaited<ReturnType<typeof api.strategies>>) => {
    body.replaceChildren();
    for (const row of strategyRows(data)) {
      const tr = el("tr", undefined, row.selected ? "selected" : "");
      tr.append(
        el("td", String(row.strategy)),
        el("td", row.f1),
        el("td", row.selected ? "selected" : ""),
      );
      body.appendChild(tr);
    }
  };

  const run = el("button", "Run strategy selection");
  run.onclick = async () => {
    try {
      setStatus("running all strategies on the validation set…");
      show(await api.runStrategySelection(projectId));
      setStatus("selection complete");
    } catch (error) {
      reportError(error);
    }
  };
  container.appendChild(run);
  show(await api.strategies(projectId));
}

async function drawAlConsole(container: HTMLElement, projectId: string): Promise<void> {
  container.appendChild(el("h2", "Active learning"));
  const samplerSelect = el("select");
  for (const sampler of ["stratified", "margin"]) {
    const option = el("option", sampler);
    option.value = sampler;
    samplerSelect.appendChild(option);
  }
  const count = el("input");
  count.type = "number";
  count.value = "100";
  const launch = el("button", "Launch round");
  const controls = el("div", undefined, "controls");
  controls.append(samplerSelect, count, launch);
  container.appendChild(controls);

  const table = el("table");
  table.innerHTML =
    "<thead><tr><th>round</th><th>sampler</th><th>n</th><th>new labels</th>" +
    "<th>precision</th><th>recall</th><th>F1</th><th>auPR</th><th>model</th></tr></thead>";
  const body = el("tbody");
  table.appendChild(body);
  container.appendChild(table);

  const repaint = async () => {
    const data = await api.rounds(projectId);
    body.replaceChildren();
    for (const row of roundRows(data.items)) {
      const tr = el("tr");
      tr.append(
        el("td", String(row.round)),
        el("td", row.sampler),
        el("td", String(row.n)),
        el("td", row.newLabels),
        el("td", row.precision),
        el("td", row.recall),
        el("td", row.f1),
        el("td", row.aupr),
        el("td", row.modelRef),
      );
      body.appendChild(tr);
    }
  };

  launch.onclick = async () => {
    try {
      setStatus("round running…");
      await api.runAlRound(projectId, samplerSelect.value, Number(count.value));
      setStatus("round complete");
      await repaint();
    } catch (error) {
      reportError(error);
    }
  };

  activePoller = new Poller(() => repaint().catch(reportError), 2000);
  activePoller.start();
}

const DRAWERS: Record<Screen, (container: HTMLElement, projectId: string) => Promise<void>> = {
  "concept-editor": drawConceptEditor,
  "validation-labeler": drawValidationLabeler,
  "rationale-review": drawRationaleReview,
  "strategy-dashboard": drawStrategyDashboard,
  "al-console": drawAlConsole,
};

async function draw(): Promise<void> {
  clearScreen();
  const container = root();
  if (session.projectId === null) {
    container.appendChild(el("p", "Pick a project above to begin."));
    return;
  }
  try {
    await DRAWERS[session.screen](container, session.projectId);
  } catch (error) {
    reportError(error);
  }
}

function buildNav(): void {
  const nav = document.getElementById("screens") as HTMLElement;
  for (const screen of SCREENS) {
    const link = el("a", screen);
    link.href = `#/${screen}`;
    nav.appendChild(link);
  }
}

window.addEventListener("hashchange", () => {
  session.navigate(screenFromHash(window.location.hash));
  void draw();
});

buildNav();
session.navigate(screenFromHash(window.location.hash));
void drawProjectPicker().catch(reportError);
void draw();
