/** DOM rendering for the labeling grid, mode tabs, stats panel, and the
 * detail pane opened by middle click. Keyboard-only operation: arrows
 * move the focused cell, P/N/C label it, Enter advances the page. */

import { Session } from "./session";
import type { GridItemView, ModeTab } from "./types";

const LABEL_CLASS: Record<string, string> = {
  POSITIVE: "cell positive",
  NEGATIVE: "cell negative",
  NONE: "cell",
};

export class GridRenderer {
  private focusIndex = 0;
  private detail: HTMLElement;
  private grid: HTMLElement;
  private statsBar: HTMLElement;
  private banner: HTMLElement;

  constructor(
    private root: HTMLElement,
    private session: Session,
  ) {
    this.root.innerHTML = `
      <nav class="tabs"></nav>
      <div class="toolbar"></div>
      <div class="banner" hidden></div>
      <div class="grid" role="grid" tabindex="0"></div>
      <aside class="detail" hidden></aside>
      <footer class="stats"></footer>`;
    this.grid = this.root.querySelector(".grid") as HTMLElement;
    this.detail = this.root.querySelector(".detail") as HTMLElement;
    this.statsBar = this.root.querySelector(".stats") as HTMLElement;
    this.banner = this.root.querySelector(".banner") as HTMLElement;
    this.renderTabs();
    this.bindKeys();
  }

  private renderTabs(): void {
    const tabs = this.root.querySelector(".tabs") as HTMLElement;
    tabs.innerHTML = "";
    const names: ModeTab[] = ["FEATURES", "SEARCH", "ACTIVE", "CORRECTION", "REVIEW"];
    for (const name of names) {
      const btn = document.createElement("button");
      btn.textContent = name.toLowerCase();
      btn.dataset.mode = name;
      btn.addEventListener("click", () => this.switchMode(name));
      tabs.appendChild(btn);
    }
  }

  private switchMode(mode: ModeTab): void {
    if (mode === "FEATURES") {
      this.renderFeatureEditor();
      return;
    }
    this.session.mode = mode;
    this.session.page = 0;
    void this.session.fetchPage().then(() => this.renderGrid());
  }

  showBanner(text: string): void {
    this.banner.hidden = false;
    this.banner.textContent = text;
  }

  renderGrid(): void {
    this.grid.innerHTML = "";
    this.session.items.forEach((item, i) => {
      this.grid.appendChild(this.cell(item, i));
    });
    this.renderStats();
  }

  private cell(item: GridItemView, index: number): HTMLElement {
    const el = document.createElement("div");
    el.className = LABEL_CLASS[item.label] ?? "cell";
    el.dataset.objectId = item.object_id;
    el.setAttribute("role", "gridcell");
    el.tabIndex = index === this.focusIndex ? 0 : -1;
    const img = document.createElement("img");
    if (item.image_ref) img.src = item.image_ref;
    img.alt = item.title;
    const caption = document.createElement("span");
    caption.textContent =
      item.probability === null ? item.title : `${item.title} (${item.probability.toFixed(2)})`;
    el.append(img, caption);
    el.addEventListener("mousedown", (ev) => {
      ev.preventDefault();
      const button = ev.button === 0 ? "LEFT" : ev.button === 2 ? "RIGHT" : "MIDDLE";
      const { openDetail } = this.session.click(item.object_id, button);
      if (openDetail) void this.openDetail(item.object_id);
      this.renderGrid();
    });
    el.addEventListener("contextmenu", (ev) => ev.preventDefault());
    return el;
  }

  private bindKeys(): void {
    this.grid.addEventListener("keydown", (ev) => {
      const count = this.session.items.length;
      if (count === 0) return;
      if (ev.key === "ArrowRight") this.focusIndex = (this.focusIndex + 1) % count;
      else if (ev.key === "ArrowLeft") this.focusIndex = (this.focusIndex + count - 1) % count;
      else if (ev.key === "Enter") {
        void this.advance();
        return;
      } else {
        const item = this.session.items[this.focusIndex];
        if (item) {
          const { openDetail } = this.session.key(item.object_id, ev.key);
          if (openDetail) void this.openDetail(item.object_id);
        }
      }
      this.renderGrid();
      (this.grid.children[this.focusIndex] as HTMLElement | undefined)?.focus();
    });
  }

  async advance(): Promise<void> {
    const ok = await this.session.advancePage();
    if (this.session.stats.modelStale) {
      this.showBanner("model is stale; labeling still allowed");
    }
    if (ok) this.banner.hidden = !this.session.stats.modelStale;
    this.renderGrid();
  }

  private async openDetail(objectId: string): Promise<void> {
    const obj = await this.session.detail(objectId);
    this.detail.hidden = false;
    this.detail.innerHTML = "";
    const title = document.createElement("h2");
    title.textContent = String(obj.title ?? objectId);
    const text = document.createElement("p");
    text.textContent = String(obj.text ?? "");
    const link = document.createElement("a");
    if (obj.source_url) {
      link.href = String(obj.source_url);
      link.textContent = "source listing";
      link.target = "_blank";
    }
    this.detail.append(title, text, link);
  }

  private renderFeatureEditor(): void {
    const bar = this.root.querySelector(".toolbar") as HTMLElement;
    bar.innerHTML = "";
    const input = document.createElement("input");
    input.placeholder = "add text-matching feature";
    const add = document.createElement("button");
    add.textContent = "add";
    const list = document.createElement("ul");
    const redraw = () => {
      list.innerHTML = "";
      for (const s of this.session.featureList) {
        const li = document.createElement("li");
        li.textContent = s;
        const rm = document.createElement("button");
        rm.textContent = "remove";
        rm.addEventListener("click", () => void this.session.removeFeature(s).then(redraw));
        li.appendChild(rm);
        list.appendChild(li);
      }
      if (this.session.retrainOnNextAdvance) {
        this.showBanner("features changed; the model retrains on the next page advance");
      }
    };
    add.addEventListener("click", () => {
      void this.session
        .addFeature(input.value)
        .then(() => {
          input.value = "";
          input.setCustomValidity("");
          redraw();
        })
        .catch((err: Error) => {
          input.setCustomValidity(err.message);
          input.reportValidity();
        });
    });
    bar.append(input, add, list);
    redraw();
  }

  renderStats(): void {
    const s = this.session.stats;
    const rate = s.positiveRate === null ? "-" : `${(100 * s.positiveRate).toFixed(1)}%`;
    this.statsBar.textContent =
      `labeled +${s.labeledPos} / -${s.labeledNeg} | pool positive rate ${rate} | ` +
      `model v${s.modelVersion}${s.modelStale ? " (stale)" : ""}`;
  }
}
