/** Click-to-label semantics for grid items.
 *
 * Left click toggles positive (green), right click toggles negative
 * (red), middle click opens the detail view and never changes the label.
 * Keyboard labeling mirrors the mouse: P/N behave like left/right click
 * and C clears.
 */

import type { GridItemView, Label, MouseButton } from "./types";

export function nextLabel(current: Label, button: MouseButton): Label {
  switch (button) {
    case "LEFT":
      return current === "POSITIVE" ? "NONE" : "POSITIVE";
    case "RIGHT":
      return current === "NEGATIVE" ? "NONE" : "NEGATIVE";
    case "MIDDLE":
      return current;
  }
}

export interface ClickResult {
  item: GridItemView;
  openDetail: boolean;
}

export function applyClick(item: GridItemView, button: MouseButton): ClickResult {
  if (button === "MIDDLE") {
    return { item, openDetail: true };
  }
  return { item: { ...item, label: nextLabel(item.label, button) }, openDetail: false };
}

/** Keys that mirror clicks for keyboard-only labeling. */
export const LABEL_KEYS: Record<string, MouseButton | "CLEAR"> = {
  p: "LEFT",
  n: "RIGHT",
  c: "CLEAR",
};

export function applyKey(item: GridItemView, key: string): ClickResult {
  const action = LABEL_KEYS[key.toLowerCase()];
  if (action === undefined) {
    return { item, openDetail: false };
  }
  if (action === "CLEAR") {
    return { item: { ...item, label: "NONE" }, openDetail: false };
  }
  return applyClick(item, action);
}
