/** Labeling session state: mode tabs, the current grid, pending edits,
 * page advancement, and the feature editor. Pure logic; rendering is in
 * render.ts. */

import { ApiClient, CandidateParams } from "./api";
import { applyClick, applyKey } from "./labels";
import { SubmitQueue } from "./queue";
import type {
  CandidatePageWire,
  GridItemView,
  Label,
  LabelEventBody,
  ModeTab,
  MouseButton,
  SessionStats,
} from "./types";

const MODE_PARAM: Record<Exclude<ModeTab, "FEATURES">, string> = {
  SEARCH: "search",
  ACTIVE: "active",
  CORRECTION: "correction",
  REVIEW: "review",
};

const EVENT_MODE: Record<Exclude<ModeTab, "FEATURES">, string> = {
  SEARCH: "WORD_SEARCH",
  ACTIVE: "ACTIVE",
  CORRECTION: "CORRECTION",
  REVIEW: "REVIEW",
};

function toView(page: CandidatePageWire): GridItemView[] {
  return page.items.map((it) => ({
    object_id: it.object_id,
    title: it.title,
    image_ref: it.image_refs[0],
    probability: it.probability,
    label: (it.label ?? "NONE") as Label,
  }));
}

export interface SessionEvents {
  onStaleLease?: () => void;
  onModelStale?: () => void;
  onError?: (message: string) => void;
}

export class Session {
  mode: Exclude<ModeTab, "FEATURES"> = "SEARCH";
  searchTerm = "";
  rangeLo = 0.5;
  rangeHi = 1.0;
  page = 0;
  pageSize = 48;

  items: GridItemView[] = [];
  /** server-acknowledged labels for the rendered items */
  private baseline = new Map<string, Label>();
  featureList: string[] = [];
  featureVersion = 0;
  retrainOnNextAdvance = false;
  stats: SessionStats = {
    labeledPos: 0,
    labeledNeg: 0,
    positiveRate: null,
    modelVersion: 0,
    modelStale: false,
  };

  private queue: SubmitQueue;

  constructor(
    private api: ApiClient,
    private events: SessionEvents = {},
    queue?: SubmitQueue,
  ) {
    this.queue = queue ?? new SubmitQueue(api);
  }

  /** Local unsubmitted edits: rendered label differs from the baseline. */
  pendingEdits(): LabelEventBody[] {
    const out: LabelEventBody[] = [];
    for (const item of this.items) {
      const base = this.baseline.get(item.object_id) ?? "NONE";
      if (item.label === base) continue;
      out.push({
        object_id: item.object_id,
        value: item.label === "NONE" ? "CLEAR" : item.label,
        mode: EVENT_MODE[this.mode],
      });
    }
    return out;
  }

  click(objectId: string, button: MouseButton): { openDetail: boolean } {
    const idx = this.items.findIndex((it) => it.object_id === objectId);
    const current = this.items[idx];
    if (current === undefined) return { openDetail: false };
    const result = applyClick(current, button);
    this.items[idx] = result.item;
    return { openDetail: result.openDetail };
  }

  key(objectId: string, key: string): { openDetail: boolean } {
    const idx = this.items.findIndex((it) => it.object_id === objectId);
    const current = this.items[idx];
    if (current === undefined) return { openDetail: false };
    const result = applyKey(current, key);
    this.items[idx] = result.item;
    return { openDetail: result.openDetail };
  }

  private candidateParams(): CandidateParams {
    const params: CandidateParams = {
      mode: MODE_PARAM[this.mode],
      page_size: this.pageSize,
    };
    if (this.mode === "SEARCH") {
      params.term = this.searchTerm;
      params.page = this.page;
    } else if (this.mode === "CORRECTION") {
      if (!(this.rangeLo < this.rangeHi)) {
        throw new Error("correction range requires lo < hi");
      }
      params.lo = this.rangeLo;
      params.hi = this.rangeHi;
    }
    return params;
  }

  async fetchPage(): Promise<void> {
    const page = await this.api.candidates(this.candidateParams());
    this.items = toView(page);
    this.baseline = new Map(this.items.map((it) => [it.object_id, it.label]));
  }

  async refreshStats(): Promise<void> {
    const s = await this.api.stats();
    this.stats = {
      labeledPos: s.labeled_pos,
      labeledNeg: s.labeled_neg,
      positiveRate: s.pool_positive_rate,
      modelVersion: s.model_version,
      modelStale: s.model_stale,
    };
  }

  /** Submit pending labels as one batch, then fetch the next candidates
   * for the current mode. Labels survive network failures in the queue;
   * a stale lease surfaces through onStaleLease and keeps the edits. */
  async advancePage(): Promise<boolean> {
    const edits = this.pendingEdits();
    const outcome = await this.queue.submit(edits);
    if (outcome.staleLease) {
      this.events.onStaleLease?.();
      return false;
    }
    if (!outcome.ok) {
      this.events.onError?.("labels queued; will retry on next advance");
      return false;
    }
    if (outcome.report) {
      this.stats = {
        labeledPos: outcome.report.labeled_counts.positive,
        labeledNeg: outcome.report.labeled_counts.negative,
        positiveRate: outcome.report.pool_positive_rate,
        modelVersion: outcome.report.model_version,
        modelStale: outcome.report.model_stale,
      };
      if (outcome.report.model_stale) this.events.onModelStale?.();
      this.retrainOnNextAdvance = false;
    }
    if (this.mode === "SEARCH") this.page += 1;
    await this.fetchPage();
    return true;
  }

  async reacquireLease(): Promise<void> {
    await this.api.acquireLease();
    await this.queue.flush();
  }

  /** Object detail for the middle-click pane. */
  async detail(objectId: string): Promise<Record<string, unknown>> {
    return this.api.object(objectId);
  }

  /** Feature editor: duplicates are rejected inline, an empty list is
   * valid, and the model picks the change up on the next advance. */
  async addFeature(matchString: string): Promise<void> {
    const normalized = matchString.trim().toLowerCase();
    if (!normalized) throw new Error("feature string must be nonempty");
    if (this.featureList.includes(normalized)) {
      throw new Error(`duplicate feature: ${normalized}`);
    }
    await this.pushFeatures([...this.featureList, normalized]);
  }

  async removeFeature(matchString: string): Promise<void> {
    await this.pushFeatures(this.featureList.filter((s) => s !== matchString));
  }

  private async pushFeatures(next: string[]): Promise<void> {
    const out = await this.api.setFeatures(next);
    this.featureList = next;
    this.featureVersion = out.feature_version;
    this.retrainOnNextAdvance = true;
  }
}
