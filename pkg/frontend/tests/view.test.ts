import { describe, expect, it, vi } from "vitest";

import { Item } from "../src/api.js";
import { renderItem, renderProgress } from "../src/view.js";

function makeItem(overrides: Partial<Item> = {}): Item {
  return {
    item_id: "item-0003",
    session_id: "s07",
    turn_index: 4,
    context: [
      { turn_index: 2, speaker: "STUDENT", text: "I got 15?", focal: false },
      { turn_index: 3, speaker: "TUTOR", text: "How did you get 15?", focal: false },
      { turn_index: 4, speaker: "TUTOR", text: "What's your next step?", focal: true },
      { turn_index: 5, speaker: "STUDENT", text: "Subtract 3?", focal: false },
    ],
    label_rater_1: "PROMPTING",
    label_rater_2: "PROBING STUDENT THINKING",
    state: "PENDING",
    decision: null,
    ...overrides,
  };
}

describe("renderItem", () => {
  it("highlights exactly one focal turn in the context", () => {
    const node = renderItem(makeItem(), { onChoose: () => {} });
    expect(node.querySelectorAll(".turn")).toHaveLength(4);
    const focal = node.querySelectorAll(".turn.focal");
    expect(focal).toHaveLength(1);
    expect(focal[0].textContent).toContain("What's your next step?");
  });

  it("shows both labels under blinded rater names with rubric definitions", () => {
    const node = renderItem(makeItem(), { onChoose: () => {} });
    const cards = node.querySelectorAll<HTMLButtonElement>("button.card");
    expect(cards).toHaveLength(2);
    expect(cards[0].querySelector(".card-title")?.textContent).toContain("Rater 1");
    expect(cards[0].querySelector(".card-label")?.textContent).toBe("PROMPTING");
    expect(cards[0].querySelector(".card-definition")?.textContent).toContain(
      "open or leading question",
    );
    expect(cards[1].querySelector(".card-title")?.textContent).toContain("Rater 2");
    expect(cards[1].querySelector(".card-definition")?.textContent).toContain(
      "articulate reasoning",
    );
  });

  it("omits the definition for a label outside the rubric", () => {
    const node = renderItem(makeItem({ label_rater_1: "MADE UP MOVE" }), {
      onChoose: () => {},
    });
    const cards = node.querySelectorAll("button.card");
    expect(cards[0].querySelector(".card-definition")).toBeNull();
    expect(cards[1].querySelector(".card-definition")).not.toBeNull();
  });

  it("renders nothing about where either label came from", () => {
    const node = renderItem(makeItem(), { onChoose: () => {} });
    const html = node.outerHTML.toLowerCase();
    expect(html).not.toContain("source");
    expect(html).not.toContain("backend");
    expect(html).not.toContain("annotator");
  });

  it("invokes onChoose with the clicked card's choice", () => {
    const onChoose = vi.fn();
    const node = renderItem(makeItem(), { onChoose });
    document.body.appendChild(node);
    node
      .querySelector<HTMLButtonElement>('button[data-choice="RATER_2"]')!
      .click();
    expect(onChoose).toHaveBeenCalledWith("RATER_2");
    node.remove();
  });

  it("marks a decided item as saved and highlights the chosen card", () => {
    const node = renderItem(
      makeItem({ state: "DECIDED", decision: "RATER_2" }),
      { onChoose: () => {} },
    );
    expect(node.querySelector(".badge")?.textContent).toBe("saved: Rater 2");
    expect(
      node.querySelector('button[data-choice="RATER_2"]')?.classList.contains("chosen"),
    ).toBe(true);
    expect(
      node.querySelector('button[data-choice="RATER_1"]')?.classList.contains("chosen"),
    ).toBe(false);
  });

  it("shows a queued choice as not yet saved", () => {
    const node = renderItem(makeItem(), {
      onChoose: () => {},
      queuedChoice: "RATER_1",
    });
    const badge = node.querySelector(".badge");
    expect(badge?.textContent).toContain("not saved");
    expect(badge?.textContent).not.toContain("saved:");
    expect(
      node.querySelector('button[data-choice="RATER_1"]')?.classList.contains("queued"),
    ).toBe(true);
    expect(node.querySelector(".chosen")).toBeNull();
  });
});

describe("renderProgress", () => {
  it("reports decided over total with a proportional bar", () => {
    const node = renderProgress({
      item_count: 10,
      decided_count: 3,
      pending_count: 7,
      digest: "d".repeat(64),
      created_at: "2026-08-10T00:00:00+00:00",
    });
    expect(node.textContent).toContain("3 / 10 decided");
    const fill = node.querySelector<HTMLElement>(".progress-fill")!;
    expect(fill.style.width).toBe("30%");
  });
});
