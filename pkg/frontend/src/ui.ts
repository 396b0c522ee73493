/** DOM layer: composer form, streaming result grid, feedback panel, status bar. */

import { ApiClient, ServerRejection } from "./api.js";
import { QueryDraft } from "./draft.js";
import { decodePpm, drawToCanvas } from "./ppm.js";
import { StreamController, StreamView, toggleRelevance } from "./stream.js";
import { BUDGET_PRESETS, TEMPLATES, templateByName } from "./templates.js";
import { ResultRecord } from "./types.js";

export class GateUi {
  private draft = new QueryDraft();
  private stream: StreamController | null = null;
  private api: ApiClient;

  constructor(
    private root: HTMLElement,
    baseUrl: string,
  ) {
    this.api = new ApiClient(baseUrl);
    this.renderShell();
    this.renderComposer();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    attrs: Record<string, string> = {},
    text = "",
  ): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
    if (text) node.textContent = text;
    return node;
  }

  private byId<T extends HTMLElement>(id: string): T {
    const node = this.root.querySelector(`#${id}`);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
  }

  private renderShell(): void {
    this.root.innerHTML = `
      <div class="gate">
        <section id="composer" class="composer"></section>
        <section class="results">
          <div id="grid" class="grid"></div>
          <aside id="panel" class="panel"></aside>
        </section>
        <footer id="statusbar" class="statusbar">ready</footer>
      </div>`;
  }

  private renderComposer(): void {
    const composer = this.byId<HTMLElement>("composer");
    composer.innerHTML = "";

    const picker = this.el("select");
    for (const t of TEMPLATES) {
      picker.appendChild(this.el("option", { value: t.name }, t.label));
    }
    const addButton = this.el("button", {}, "add predicate");
    addButton.onclick = () => {
      this.draft.addFromTemplate(templateByName(picker.value));
      this.renderComposer();
    };

    const opToggle = this.el("button", {}, `combine: ${this.draft.op.toUpperCase()}`);
    opToggle.onclick = () => {
      this.draft.op = this.draft.op === "and" ? "or" : "and";
      this.renderComposer();
    };

    const list = this.el("ul", { class: "predicates" });
    this.draft.predicates.forEach((p, index) => {
      const item = this.el("li", {}, "");
      item.appendChild(this.el("strong", {}, p.name));
      for (const field of p.parameters) {
        const input = this.el("input", { value: String(field.value), size: "6" });
        input.onchange = () => {
          field.value = field.kind === "number" ? Number(input.value) : input.value;
        };
        item.appendChild(this.el("label", {}, ` ${field.name} `));
        item.appendChild(input);
      }
      const threshold = this.el("input", { value: String(p.threshold), size: "6" });
      threshold.onchange = () => {
        p.threshold = Number(threshold.value);
      };
      item.appendChild(this.el("label", {}, " threshold "));
      item.appendChild(threshold);
      const remove = this.el("button", {}, "x");
      remove.onclick = () => {
        this.draft.removeAt(index);
        this.renderComposer();
      };
      item.appendChild(remove);
      list.appendChild(item);
    });

    const budget = this.el("input", { id: "budget", value: String(this.draft.budget), size: "8" });
    budget.onchange = () => {
      this.draft.budget = Number(budget.value);
    };
    const presets = this.el("span");
    for (const preset of BUDGET_PRESETS) {
      const b = this.el("button", {}, String(preset));
      b.onclick = () => {
        this.draft.budget = preset;
        budget.value = String(preset);
      };
      presets.appendChild(b);
    }

    const revise = this.el("button", {}, "revise (keep query id)");
    revise.onclick = () => {
      this.draft = this.draft.revise();
      this.renderComposer();
    };
    const renew = this.el("button", {}, "new query id");
    renew.onclick = () => {
      this.draft = this.draft.renew();
      this.renderComposer();
    };

    const submit = this.el("button", { id: "submit" }, "submit");
    submit.onclick = () => void this.submit();

    const errors = this.el("div", { id: "errors", class: "errors" });

    composer.append(
      this.el("h2", {}, "compose"),
      picker,
      addButton,
      opToggle,
      list,
      this.el("label", {}, "budget "),
      budget,
      presets,
      this.el("span", { id: "queryid" }, ` query id ${this.draft.queryId} `),
      revise,
      renew,
      submit,
      errors,
    );
  }

  private setStatus(text: string): void {
    this.byId<HTMLElement>("statusbar").textContent = text;
  }

  private showErrors(problems: string[]): void {
    this.byId<HTMLElement>("errors").textContent = problems.join("; ");
  }

  async submit(): Promise<void> {
    const problems = this.draft.validate();
    if (problems.length > 0) {
      this.showErrors(problems);
      return;
    }
    const submitButton = this.byId<HTMLButtonElement>("submit");
    submitButton.disabled = true;
    this.showErrors([]);
    this.byId<HTMLElement>("grid").innerHTML = "";
    try {
      const response = await this.api.submitQuery(
        this.draft.toXml(),
        this.draft.budget,
        Date.now() % 2 ** 31,
      );
      this.setStatus(`running session ${response.session_id} on ${response.devices.length} devices`);
      this.stream = new StreamController(this.api, response.session_id, (view) =>
        this.renderStream(view),
      );
      await this.stream.follow();
    } catch (err) {
      if (err instanceof ServerRejection) {
        const minimum = err.budgetMinimum;
        this.showErrors([
          minimum !== null ? `budget below the minimum of ${minimum} units` : String(err.message),
        ]);
        this.setStatus("rejected");
      } else {
        this.showErrors([String(err)]);
        this.setStatus("error");
      }
    } finally {
      submitButton.disabled = false;
    }
  }

  private renderStream(view: StreamView): void {
    const grid = this.byId<HTMLElement>("grid");
    for (let i = grid.childElementCount; i < view.records.length; i++) {
      grid.appendChild(this.renderCard(view.records[i]!));
    }
    if (view.completion) {
      this.renderPanel();
      const c = view.completion;
      this.setStatus(
        `${c.results} results | ${c.photos_searched} photos searched over ` +
          `${c.devices_searched} devices | ${c.total_charge}/${c.budget} units`,
      );
    }
  }

  private renderCard(record: ResultRecord): HTMLElement {
    const card = this.el("div", { class: "card" });
    const canvas = this.el("canvas", { class: "thumb" });
    void this.api
      .photoBytes(record.device_id, record.photo_id)
      .then((bytes) => drawToCanvas(decodePpm(bytes), canvas))
      .catch(() => canvas.setAttribute("title", "photo unavailable"));
    const badge = this.el("span", { class: "score" }, record.score.toFixed(3));
    const mark = this.el(
      "button",
      { class: "mark" },
      record.relevance_mark === "relevant" ? "relevant" : "mark relevant",
    );
    mark.onclick = () => {
      void toggleRelevance(this.api, record.session, record)
        .then((state) => {
          mark.textContent = state === "relevant" ? "relevant" : "mark relevant";
        })
        .catch(() => this.setStatus("feedback failed; toggle reverted"));
    };
    card.append(
      canvas,
      this.el("div", {}, `${record.device_id} / ${record.photo_id}`),
      badge,
      mark,
    );
    return card;
  }

  private renderPanel(): void {
    const panel = this.byId<HTMLElement>("panel");
    const selectivity = this.stream?.selectivityPanel();
    if (!selectivity) return;
    panel.innerHTML = "<h3>per-predicate selectivity</h3>";
    for (const [name, value] of Object.entries(selectivity)) {
      // display the stream's values verbatim; no reformatting
      panel.appendChild(this.el("div", {}, `${name}: ${JSON.stringify(value)}`));
    }
  }
}
