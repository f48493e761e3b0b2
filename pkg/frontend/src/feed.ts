// Feed view: the Data-tab tree, comments, and the ⊕ plugin ribbon with
// schema-generated parameter forms. Node badges refresh by polling until
// every node is terminal; nothing is shown that the API did not report.

import { Api, ApiError, PluginJson, TreeJson } from "./api.js";
import { formFields, toTreeRows, validateForm } from "./models.js";
import type { ViewHandle } from "./home.js";

export function renderFeed(
  container: HTMLElement,
  api: Api,
  feedId: number,
  onAuthError: () => void,
  pollIntervalMs = 2000,
): ViewHandle {
  container.innerHTML = `
    <section>
      <div class="toolbar">
        <a href="#/">&larr; feeds</a>
        <h2 id="feed-title"></h2>
        <button id="open-ribbon" title="run a plugin">⊕</button>
      </div>
      <div id="ribbon" hidden></div>
      <div class="columns">
        <div>
          <h3>Data</h3>
          <div id="tree"></div>
        </div>
        <div>
          <h3>Comments</h3>
          <ul id="comments"></ul>
          <form id="comment-form">
            <input id="comment-text" placeholder="add a comment">
            <button type="submit">post</button>
          </form>
          <h3>Share</h3>
          <form id="share-form">
            <input id="share-to" placeholder="user login">
            <button type="submit">share</button>
          </form>
        </div>
      </div>
      <div id="feed-error" class="error" hidden></div>
    </section>`;

  const treeBox = container.querySelector<HTMLElement>("#tree")!;
  const errorBox = container.querySelector<HTMLElement>("#feed-error")!;
  let stopped = false;
  let selected: string | null = null;
  let timer: ReturnType<typeof setInterval> | null = null;

  async function refresh(): Promise<void> {
    if (stopped) return;
    let tree: TreeJson;
    try {
      tree = await api.tree(feedId);
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
    container.querySelector("#feed-title")!.textContent = tree.feed.title;
    renderTree(tree);
    renderComments(tree);
    // polling continues while the view is mounted: statuses settle once all
    // nodes are terminal, but comments from other sessions keep arriving
  }

  function renderTree(tree: TreeJson): void {
    const rows = toTreeRows(tree);
    treeBox.replaceChildren(...rows.map((row) => {
      const el = document.createElement("div");
      el.className = "tree-node" + (String(row.nodeId) === selected ? " selected" : "");
      el.dataset.nodeId = String(row.nodeId);
      el.style.marginLeft = `${row.depth * 1.5}em`;
      el.innerHTML = `
        <span class="badge status-${row.status}">${row.status}</span>
        <span class="node-label"></span>
        <span class="param-summary"></span>
        <div class="file-list" hidden></div>`;
      el.querySelector(".node-label")!.textContent = row.label;
      el.querySelector(".param-summary")!.textContent =
        row.paramSummary ? `(${row.paramSummary})` : "";
      const files = el.querySelector<HTMLElement>(".file-list")!;
      files.replaceChildren(...row.outputFiles.map((f) => {
        const item = document.createElement("div");
        item.className = "file";
        item.textContent = `📄 ${f}`;
        return item;
      }));
      if (row.error) {
        const err = document.createElement("div");
        err.className = "node-error";
        err.textContent = row.error;
        el.appendChild(err);
      }
      files.hidden = String(row.nodeId) !== selected;
      el.addEventListener("click", () => {
        selected = selected === String(row.nodeId) ? null : String(row.nodeId);
        void refresh();
      });
      return el;
    }));
  }

  function renderComments(tree: TreeJson): void {
    const list = container.querySelector<HTMLElement>("#comments")!;
    list.replaceChildren(...(tree.feed.comments ?? []).map((comment) => {
      const item = document.createElement("li");
      item.textContent = `${comment.author}: ${comment.text}`;
      return item;
    }));
  }

  container.querySelector("#comment-form")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const input = container.querySelector<HTMLInputElement>("#comment-text")!;
    if (input.value.trim()) {
      await api.annotate(feedId, "ADD_COMMENT", input.value.trim());
      input.value = "";
      await refresh();
    }
  });

  container.querySelector("#share-form")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const input = container.querySelector<HTMLInputElement>("#share-to")!;
    if (input.value.trim()) {
      try {
        await api.share(feedId, input.value.trim());
        input.value = "";
      } catch (err) {
        errorBox.hidden = false;
        errorBox.textContent = String(err);
      }
    }
  });

  // -- plugin ribbon --------------------------------------------------------------

  const ribbon = container.querySelector<HTMLElement>("#ribbon")!;
  container.querySelector("#open-ribbon")!.addEventListener("click", async () => {
    ribbon.hidden = !ribbon.hidden;
    if (!ribbon.hidden) {
      const plugins = await api.plugins();
      renderRibbon(plugins);
    }
  });

  function renderRibbon(plugins: PluginJson[]): void {
    ribbon.innerHTML = `<div class="ribbon"></div><div id="param-form"></div>`;
    const strip = ribbon.querySelector<HTMLElement>(".ribbon")!;
    strip.replaceChildren(...plugins.map((plugin) => {
      const chip = document.createElement("button");
      chip.className = "plugin-chip";
      chip.textContent = `${plugin.name} v${plugin.version}`;
      chip.addEventListener("click", () => {
        renderParamForm(ribbon.querySelector<HTMLElement>("#param-form")!, plugin);
      });
      return chip;
    }));
    if (plugins.length === 0) {
      strip.innerHTML = `<p class="empty">No plugins registered.</p>`;
    }
  }

  function renderParamForm(box: HTMLElement, plugin: PluginJson): void {
    const fields = formFields(plugin);
    const form = document.createElement("form");
    form.className = "param-form";
    form.innerHTML = `<h4>${plugin.name} parameters</h4>`;
    for (const field of fields) {
      const label = document.createElement("label");
      label.textContent = `${field.name}${field.required ? " *" : ""} `;
      let input: HTMLElement;
      if (field.type === "choice" && field.choices) {
        const select = document.createElement("select");
        select.name = field.name;
        select.append(new Option("", ""));
        for (const choice of field.choices) {
          select.append(new Option(choice, choice));
        }
        input = select;
      } else {
        const text = document.createElement("input");
        text.name = field.name;
        if (field.default !== null && field.default !== undefined) {
          text.placeholder = `default: ${field.default}`;
        }
        input = text;
      }
      label.appendChild(input);
      const inlineError = document.createElement("span");
      inlineError.className = "error inline-error";
      label.appendChild(inlineError);
      form.appendChild(label);
    }
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.textContent = "Run on selected node (or root)";
    form.appendChild(submit);
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      const raw: Record<string, string> = {};
      for (const el of Array.from(form.querySelectorAll<HTMLInputElement>("input, select"))) {
        raw[el.name] = el.value;
      }
      const check = validateForm(fields, raw);
      for (const field of fields) {
        const label = Array.from(form.querySelectorAll("label"))
          .find((l) => l.querySelector(`[name="${field.name}"]`));
        if (label) {
          label.querySelector(".inline-error")!.textContent = check.errors[field.name] ?? "";
        }
      }
      if (!check.ok) {
        return; // inline errors shown; nothing sent
      }
      const parent = selected === null || selected === "root" ? "root" : Number(selected);
      try {
        await api.createInstance(feedId, plugin.id, parent, check.values);
        ribbon.hidden = true;
        await refresh();
      } catch (err) {
        errorBox.hidden = false;
        errorBox.textContent = String(err);
      }
    });
    box.replaceChildren(form);
  }

  void refresh();
  timer = setInterval(refresh, pollIntervalMs);
  return {
    stop() {
      stopped = true;
      if (timer !== null) {
        clearInterval(timer);
      }
    },
  };
}
