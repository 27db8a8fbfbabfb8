import { describe, expect, it } from "vitest";

import { ApiClient, StaleLeaseError } from "../src/api";
import { SubmitQueue } from "../src/queue";
import { Session } from "../src/session";
import type { CandidatePageWire, LabelEventBody, TrainReportWire } from "../src/types";

function page(ids: string[], labels: (string | null)[] = []): CandidatePageWire {
  return {
    mode: "ACTIVE",
    page_token: "t",
    items: ids.map((id, i) => ({
      object_id: id,
      probability: 0.5,
      label: (labels[i] ?? null) as "POSITIVE" | "NEGATIVE" | null,
      title: id,
      image_refs: [],
      source_url: null,
    })),
    pool_stats: {},
  };
}

function report(partial: Partial<TrainReportWire> = {}): TrainReportWire {
  return {
    iterations: 3,
    pool_positive_rate: 0.2,
    labeled_counts: { positive: 1, negative: 1 },
    model_version: 1,
    model_stale: false,
    retrained: true,
    ...partial,
  };
}

/** In-memory ApiClient double recording every labels POST. */
class FakeApi {
  posts: { labels: LabelEventBody[]; key: string }[] = [];
  pages: CandidatePageWire[] = [];
  featureCalls: string[][] = [];
  failures = 0;
  staleOnce = false;
  nextReport: TrainReportWire = report();

  async candidates(): Promise<CandidatePageWire> {
    return this.pages.shift() ?? page([]);
  }

  async postLabels(labels: LabelEventBody[], key: string): Promise<TrainReportWire> {
    if (this.staleOnce) {
      this.staleOnce = false;
      throw new StaleLeaseError(423, "stale_lease", "stale");
    }
    if (this.failures > 0) {
      this.failures -= 1;
      throw new Error("network down");
    }
    this.posts.push({ labels, key });
    return this.nextReport;
  }

  async setFeatures(match_strings: string[]): Promise<{ feature_version: number }> {
    this.featureCalls.push(match_strings);
    return { feature_version: this.featureCalls.length };
  }

  async acquireLease(): Promise<void> {}
  async stats() {
    return {
      labeled_pos: 0,
      labeled_neg: 0,
      unlabeled: 0,
      events: 0,
      model_version: 0,
      model_stale: false,
      pool_positive_rate: null,
      feature_version: 0,
    };
  }
  async object(): Promise<Record<string, unknown>> {
    return {};
  }
}

function makeSession(fake: FakeApi, events = {}) {
  const api = fake as unknown as ApiClient;
  const queue = new SubmitQueue(api, 3, 1, async () => {});
  return new Session(api, events, queue);
}

describe("advance_page", () => {
  it("submits pending edits as one batch", async () => {
    const fake = new FakeApi();
    fake.pages = [page(["a", "b", "c"]), page(["d"])];
    const session = makeSession(fake);
    session.mode = "ACTIVE";
    await session.fetchPage();
    session.click("a", "LEFT");
    session.click("b", "RIGHT");
    session.click("c", "LEFT");
    session.click("c", "LEFT"); // toggled back off: not an edit
    await session.advancePage();
    expect(fake.posts).toHaveLength(1);
    expect(fake.posts[0]!.labels).toEqual([
      { object_id: "a", value: "POSITIVE", mode: "ACTIVE" },
      { object_id: "b", value: "NEGATIVE", mode: "ACTIVE" },
    ]);
    expect(session.items.map((i) => i.object_id)).toEqual(["d"]);
  });

  it("advancing with zero edits refetches without posting labels", async () => {
    const fake = new FakeApi();
    fake.pages = [page(["a"]), page(["b"])];
    const session = makeSession(fake);
    session.mode = "ACTIVE";
    await session.fetchPage();
    await session.advancePage();
    expect(fake.posts).toHaveLength(0);
    expect(session.items[0]!.object_id).toBe("b");
  });

  it("clearing a server-acknowledged label emits CLEAR", async () => {
    const fake = new FakeApi();
    fake.pages = [page(["a"], ["POSITIVE"]), page([])];
    const session = makeSession(fake);
    session.mode = "REVIEW";
    await session.fetchPage();
    session.key("a", "c");
    expect(session.pendingEdits()).toEqual([
      { object_id: "a", value: "CLEAR", mode: "REVIEW" },
    ]);
  });

  it("keeps edits and retries with the same idempotency key on network failure", async () => {
    const fake = new FakeApi();
    fake.pages = [page(["a"]), page([])];
    fake.failures = 5; // more than one flush's worth of attempts
    const session = makeSession(fake);
    session.mode = "ACTIVE";
    await session.fetchPage();
    session.click("a", "LEFT");
    const ok = await session.advancePage();
    expect(ok).toBe(false);
    expect(fake.posts).toHaveLength(0);
    fake.failures = 0;
    fake.pages = [page([])];
    await session.advancePage(); // retry delivers exactly one batch
    expect(fake.posts).toHaveLength(1);
    expect(fake.posts[0]!.labels[0]).toEqual({
      object_id: "a",
      value: "POSITIVE",
      mode: "ACTIVE",
    });
  });

  it("stale lease surfaces through the modal callback and retains edits", async () => {
    const fake = new FakeApi();
    fake.pages = [page(["a"]), page([])];
    fake.staleOnce = true;
    let prompted = false;
    const session = makeSession(fake, { onStaleLease: () => (prompted = true) });
    session.mode = "ACTIVE";
    await session.fetchPage();
    session.click("a", "RIGHT");
    const ok = await session.advancePage();
    expect(ok).toBe(false);
    expect(prompted).toBe(true);
    await session.reacquireLease(); // flushes the retained batch
    expect(fake.posts).toHaveLength(1);
  });

  it("model_stale report triggers the banner but labeling continues", async () => {
    const fake = new FakeApi();
    fake.pages = [page(["a"]), page(["b"])];
    fake.nextReport = report({ model_stale: true, retrained: false });
    let bannered = false;
    const session = makeSession(fake, { onModelStale: () => (bannered = true) });
    session.mode = "ACTIVE";
    await session.fetchPage();
    session.click("a", "LEFT");
    const ok = await session.advancePage();
    expect(ok).toBe(true);
    expect(bannered).toBe(true);
    expect(session.stats.modelStale).toBe(true);
    expect(session.items).toHaveLength(1); // next page still fetched
  });

  it("correction tab enforces lo < hi before any request", async () => {
    const fake = new FakeApi();
    const session = makeSession(fake);
    session.mode = "CORRECTION";
    session.rangeLo = 0.6;
    session.rangeHi = 0.4;
    await expect(session.fetchPage()).rejects.toThrow("lo < hi");
  });
});

describe("edit_features", () => {
  it("adds to an empty list", async () => {
    const fake = new FakeApi();
    const session = makeSession(fake);
    await session.addFeature("mug");
    expect(session.featureList).toEqual(["mug"]);
    expect(session.retrainOnNextAdvance).toBe(true);
  });

  it("rejects duplicates with inline validation", async () => {
    const fake = new FakeApi();
    const session = makeSession(fake);
    await session.addFeature("mug");
    await expect(session.addFeature("MUG")).rejects.toThrow("duplicate");
    expect(fake.featureCalls).toHaveLength(1);
  });

  it("removing the last feature leaves a valid empty list", async () => {
    const fake = new FakeApi();
    const session = makeSession(fake);
    await session.addFeature("mug");
    await session.removeFeature("mug");
    expect(session.featureList).toEqual([]);
    expect(fake.featureCalls.at(-1)).toEqual([]);
  });
});
