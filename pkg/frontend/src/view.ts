// DOM rendering. Everything shown about an item comes from the API payload;
// the only additions are the bundled rubric definitions and the blinded
// column names "Rater 1" / "Rater 2".

import { Choice, Item, Meta } from "./api.js";
import { definitionFor } from "./rubric.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderProgress(meta: Meta): HTMLElement {
  const wrap = el("div", "progress");
  wrap.appendChild(
    el(
      "span",
      "progress-count",
      `${meta.decided_count} / ${meta.item_count} decided`,
    ),
  );
  const bar = el("div", "progress-bar");
  const fill = el("div", "progress-fill");
  const pct =
    meta.item_count === 0 ? 0 : (100 * meta.decided_count) / meta.item_count;
  fill.style.width = `${pct}%`;
  bar.appendChild(fill);
  wrap.appendChild(bar);
  return wrap;
}

export interface ItemViewOptions {
  onChoose: (choice: Choice) => void;
  /** Choice made locally but not yet acknowledged by the server. */
  queuedChoice?: Choice | null;
}

function renderBadge(item: Item, queuedChoice: Choice | null): HTMLElement {
  if (queuedChoice !== null) {
    return el("span", "badge badge-queued", "queued, not saved yet");
  }
  if (item.state === "DECIDED") {
    const who = item.decision === "RATER_1" ? "Rater 1" : "Rater 2";
    return el("span", "badge badge-decided", `saved: ${who}`);
  }
  return el("span", "badge badge-pending", "pending");
}

function renderContext(item: Item): HTMLElement {
  const list = el("ol", "context");
  for (const turn of item.context) {
    const row = el("li", turn.focal ? "turn focal" : "turn");
    row.appendChild(
      el("span", "speaker", `${turn.speaker} · ${turn.turn_index}`),
    );
    row.appendChild(el("span", "utterance", turn.text));
    list.appendChild(row);
  }
  return list;
}

function renderCard(
  title: string,
  label: string,
  choice: Choice,
  shortcut: string,
  item: Item,
  opts: ItemViewOptions,
): HTMLElement {
  const card = el("button", "card");
  card.type = "button";
  card.dataset.shortcut = shortcut;
  card.dataset.choice = choice;
  if (opts.queuedChoice === choice) card.classList.add("queued");
  else if (item.state === "DECIDED" && item.decision === choice) {
    card.classList.add("chosen");
  }
  card.appendChild(el("span", "card-title", `${title} (${shortcut})`));
  card.appendChild(el("span", "card-label", label));
  const definition = definitionFor(label);
  if (definition !== null) {
    card.appendChild(el("span", "card-definition", definition));
  }
  card.addEventListener("click", () => opts.onChoose(choice));
  return card;
}

export function renderItem(item: Item, opts: ItemViewOptions): HTMLElement {
  const section = el("section", "item");
  section.dataset.itemId = item.item_id;

  const header = el("header", "item-header");
  header.appendChild(el("span", "item-id", item.item_id));
  header.appendChild(
    el(
      "span",
      "item-loc",
      `session ${item.session_id}, turn ${item.turn_index}`,
    ),
  );
  header.appendChild(renderBadge(item, opts.queuedChoice ?? null));
  section.appendChild(header);

  section.appendChild(renderContext(item));

  const choices = el("div", "choices");
  choices.appendChild(
    renderCard("Rater 1", item.label_rater_1, "RATER_1", "1", item, opts),
  );
  choices.appendChild(
    renderCard("Rater 2", item.label_rater_2, "RATER_2", "2", item, opts),
  );
  section.appendChild(choices);

  return section;
}
