// Full review flow against an in-memory fake of the adjudication service.
// The fake speaks the same JSON as the real API and additionally records
// every byte that crosses the wire so blinding can be checked end to end.

import { afterEach, describe, expect, it, vi } from "vitest";

import { Item } from "../src/api.js";
import { mountApp } from "../src/main.js";

type Choice = "RATER_1" | "RATER_2";

const LABEL_PAIRS: Array<[string, string]> = [
  ["PROMPTING", "PROBING STUDENT THINKING"],
  ["REVOICING", "SCAFFOLDING"],
  ["GIVING HINT", "PROVIDING EXPLANATION"],
  ["GIVING PRAISE", "EMOTIONAL SUPPORT"],
  ["ERROR CORRECTION", "USING VISUAL CUES"],
];

class FakeServer {
  readonly items = new Map<string, Item>();
  readonly order: string[] = [];
  readonly overrideLog: Array<{
    item_id: string;
    previous: Choice;
    next: Choice;
  }> = [];
  /** Every response body sent to the client. */
  readonly wire: string[] = [];
  /** Every request body received from the client. */
  readonly requests: string[] = [];
  readonly decisionOrder: string[] = [];
  // What the sealed map knows and the API must never reveal.
  readonly hiddenSources = ["backend-alpha-v1", "backend-beta-v1"];
  offline = false;
  exports = 0;

  constructor(n: number) {
    for (let i = 0; i < n; i++) {
      const id = `item-${String(i).padStart(4, "0")}`;
      const [a, b] = LABEL_PAIRS[i % LABEL_PAIRS.length];
      this.items.set(id, {
        item_id: id,
        session_id: `s${String((i % 3) + 1).padStart(2, "0")}`,
        turn_index: 2 * (i + 1),
        context: [
          {
            turn_index: 2 * i + 1,
            speaker: "STUDENT",
            text: `student turn ${i}`,
            focal: false,
          },
          {
            turn_index: 2 * (i + 1),
            speaker: "TUTOR",
            text: `tutor turn ${i}`,
            focal: true,
          },
          {
            turn_index: 2 * i + 3,
            speaker: "STUDENT",
            text: `student reply ${i}`,
            focal: false,
          },
        ],
        label_rater_1: a,
        label_rater_2: b,
        state: "PENDING",
        decision: null,
      });
      this.order.push(id);
    }
  }

  decidedCount(): number {
    let n = 0;
    for (const it of this.items.values()) if (it.state === "DECIDED") n++;
    return n;
  }

  decideDirect(id: string, choice: Choice): void {
    const it = this.items.get(id)!;
    it.state = "DECIDED";
    it.decision = choice;
  }

  private meta() {
    const decided = this.decidedCount();
    return {
      item_count: this.order.length,
      decided_count: decided,
      pending_count: this.order.length - decided,
      digest: "e".repeat(64),
      created_at: "2026-08-12T09:00:00+00:00",
    };
  }

  private respond(status: number, body: unknown): Response {
    this.wire.push(JSON.stringify(body));
    return {
      ok: status >= 200 && status < 300,
      status,
      json: () => Promise.resolve(body),
    } as unknown as Response;
  }

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    if (this.offline) throw new TypeError("network down");
    if (init?.body) this.requests.push(String(init.body));
    const parsed = new URL(url, "http://unit.test");
    const path = parsed.pathname;

    if (path === "/api/packet/meta") return this.respond(200, this.meta());

    if (path === "/api/items") {
      const offset = Number(parsed.searchParams.get("offset") ?? "0");
      const limit = Number(parsed.searchParams.get("limit") ?? "50");
      if (offset < 0 || limit < 1 || limit > 500) {
        return this.respond(400, { detail: "bad paging parameters" });
      }
      const page = this.order
        .slice(offset, offset + limit)
        .map((id) => ({ ...this.items.get(id)! }));
      return this.respond(200, {
        items: page,
        total_matching: this.order.length,
        offset,
        limit,
      });
    }

    const decision = path.match(/^\/api\/items\/([^/]+)\/decision$/);
    if (decision && init?.method === "POST") {
      const item = this.items.get(decision[1]);
      if (!item) {
        return this.respond(404, { detail: `unknown item '${decision[1]}'` });
      }
      const body = JSON.parse(String(init.body));
      if (body.choice !== "RATER_1" && body.choice !== "RATER_2") {
        return this.respond(400, { detail: `unknown choice '${body.choice}'` });
      }
      if (item.state === "DECIDED" && item.decision !== body.choice) {
        if (!body.override) {
          return this.respond(409, {
            detail: `item '${item.item_id}' is already decided; repeat with override to replace it`,
          });
        }
        this.overrideLog.push({
          item_id: item.item_id,
          previous: item.decision as Choice,
          next: body.choice,
        });
      }
      if (item.state === "PENDING") this.decisionOrder.push(item.item_id);
      item.state = "DECIDED";
      item.decision = body.choice;
      return this.respond(200, { item: { ...item }, meta: this.meta() });
    }

    const single = path.match(/^\/api\/items\/([^/]+)$/);
    if (single) {
      const item = this.items.get(single[1]);
      if (!item) {
        return this.respond(404, { detail: `unknown item '${single[1]}'` });
      }
      return this.respond(200, { ...item });
    }

    if (path === "/api/export" && init?.method === "POST") {
      this.exports += 1;
      return this.respond(200, {
        path: "/tmp/packet-export.json",
        meta: this.meta(),
      });
    }

    return this.respond(404, { detail: `no route for ${path}` });
  };
}

async function settle(rounds = 6): Promise<void> {
  for (let i = 0; i < rounds; i++) {
    await new Promise<void>((r) => setTimeout(r, 0));
  }
}

function key(k: string): void {
  window.dispatchEvent(new KeyboardEvent("keydown", { key: k }));
}

function click(selector: string): void {
  const btn = document.querySelector<HTMLButtonElement>(selector);
  expect(btn, `expected element ${selector}`).not.toBeNull();
  btn!.click();
}

async function mountFresh(server: FakeServer): Promise<HTMLElement> {
  vi.stubGlobal("fetch", server.fetch);
  document.body.innerHTML = "";
  const root = document.createElement("div");
  document.body.appendChild(root);
  await mountApp(root);
  return root;
}

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

describe("review flow", () => {
  it("decides a whole packet with the keyboard, one immediate POST each", async () => {
    const server = new FakeServer(10);
    const root = await mountFresh(server);
    expect(root.textContent).toContain("0 / 10 decided");
    expect(root.textContent).toContain("item 1 of 10");

    for (let i = 0; i < 10; i++) {
      key(i % 2 === 0 ? "1" : "2");
      await settle();
      expect(server.decidedCount()).toBe(i + 1);
    }

    expect(root.textContent).toContain("10 / 10 decided");
    expect(server.decisionOrder).toEqual(server.order);
    expect(server.items.get("item-0000")!.decision).toBe("RATER_1");
    expect(server.items.get("item-0001")!.decision).toBe("RATER_2");
    expect(server.items.get("item-0009")!.decision).toBe("RATER_2");
  });

  it("navigates with arrows and buttons without changing any decision", async () => {
    const server = new FakeServer(4);
    const root = await mountFresh(server);
    key("ArrowRight");
    expect(root.textContent).toContain("item 2 of 4");
    key("ArrowLeft");
    expect(root.textContent).toContain("item 1 of 4");
    click("#next-btn");
    click("#next-btn");
    expect(root.textContent).toContain("item 3 of 4");
    click("#prev-btn");
    expect(root.textContent).toContain("item 2 of 4");
    expect(server.decidedCount()).toBe(0);
  });

  it("resumes from server state after a reload", async () => {
    const server = new FakeServer(5);
    await mountFresh(server);
    key("1");
    await settle();
    key("1");
    await settle();
    expect(server.decidedCount()).toBe(2);

    const root = await mountFresh(server);
    expect(root.textContent).toContain("2 / 5 decided");
    expect(root.textContent).toContain("item 3 of 5");
    click("#prev-btn");
    click("#prev-btn");
    expect(root.querySelector(".badge")?.textContent).toBe("saved: Rater 1");
  });

  it("exports the packet on request", async () => {
    const server = new FakeServer(3);
    const root = await mountFresh(server);
    click("#export-btn");
    await settle();
    expect(server.exports).toBe(1);
    expect(root.textContent).toContain("exported to /tmp/packet-export.json");
  });
});

describe("offline behaviour", () => {
  it("queues a choice made while offline and never shows it as saved", async () => {
    const server = new FakeServer(4);
    const root = await mountFresh(server);

    server.offline = true;
    key("1");
    await settle();
    expect(server.decidedCount()).toBe(0);
    expect(root.textContent).toContain("0 / 4 decided");
    click("#prev-btn");
    const badge = root.querySelector(".badge");
    expect(badge?.textContent).toContain("not saved");
    expect(badge?.textContent).not.toContain("saved:");

    server.offline = false;
    click("#retry-btn");
    await settle();
    expect(server.decidedCount()).toBe(1);
    expect(server.items.get("item-0000")!.decision).toBe("RATER_1");
    expect(root.textContent).toContain("1 / 4 decided");
    expect(root.querySelector(".offline-banner")).toBeNull();
    expect(root.querySelector(".badge")?.textContent).toBe("saved: Rater 1");
  });

  it("flushes the whole queue in order when the connection returns", async () => {
    const server = new FakeServer(6);
    const root = await mountFresh(server);

    server.offline = true;
    for (const k of ["1", "2", "1"]) {
      key(k);
      await settle();
    }
    expect(root.querySelector(".offline-banner")?.textContent).toContain(
      "3 decisions waiting to save",
    );
    expect(server.decidedCount()).toBe(0);

    server.offline = false;
    window.dispatchEvent(new Event("online"));
    await settle();
    expect(server.decidedCount()).toBe(3);
    expect(server.decisionOrder).toEqual([
      "item-0000",
      "item-0001",
      "item-0002",
    ]);
    expect(server.items.get("item-0001")!.decision).toBe("RATER_2");
    expect(root.querySelector(".offline-banner")).toBeNull();
    expect(root.textContent).toContain("3 / 6 decided");
  });
});

describe("conflicts", () => {
  it("asks for an explicit override before replacing a saved decision", async () => {
    const server = new FakeServer(4);
    server.decideDirect("item-0000", "RATER_1");
    const root = await mountFresh(server);
    expect(root.textContent).toContain("item 2 of 4");

    click("#prev-btn");
    expect(root.querySelector(".badge")?.textContent).toBe("saved: Rater 1");

    click('button[data-choice="RATER_2"]');
    await settle();
    const dialog = root.querySelector(".overlay .dialog");
    expect(dialog).not.toBeNull();
    expect(dialog!.textContent).toContain("Already decided");
    expect(dialog!.textContent).toContain("override");

    click("#override-cancel");
    expect(root.querySelector(".overlay")).toBeNull();
    expect(server.items.get("item-0000")!.decision).toBe("RATER_1");
    expect(server.overrideLog).toHaveLength(0);

    click('button[data-choice="RATER_2"]');
    await settle();
    click("#override-confirm");
    await settle();
    expect(root.querySelector(".overlay")).toBeNull();
    expect(server.items.get("item-0000")!.decision).toBe("RATER_2");
    expect(server.overrideLog).toEqual([
      { item_id: "item-0000", previous: "RATER_1", next: "RATER_2" },
    ]);
    expect(root.querySelector(".badge")?.textContent).toBe("saved: Rater 2");
  });
});

describe("blinding", () => {
  it("keeps source identity out of the DOM and off the wire", async () => {
    const server = new FakeServer(6);
    const root = await mountFresh(server);
    const domSnapshots: string[] = [document.body.innerHTML];

    for (const k of ["1", "2", "ArrowRight", "1"]) {
      key(k);
      await settle();
      domSnapshots.push(document.body.innerHTML);
    }
    click("#export-btn");
    await settle();
    domSnapshots.push(document.body.innerHTML);

    const everything = [
      ...server.wire,
      ...server.requests,
      ...domSnapshots,
    ].join("\n");
    for (const source of server.hiddenSources) {
      expect(everything).not.toContain(source);
    }
    expect(everything.toLowerCase()).not.toContain("source_a");
    expect(everything.toLowerCase()).not.toContain("source_b");
    expect(root.textContent).toContain("Rater 1");
    expect(root.textContent).toContain("Rater 2");
  });
});
