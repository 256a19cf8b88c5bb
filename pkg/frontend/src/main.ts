// Bootstrap: wire the store to the DOM and start the 1-second job poll.

import { ApiClient } from "./api.js";
import { validateDraft } from "./predicate.js";
import type { PredicateDraft } from "./predicate.js";
import { Store } from "./state.js";
import type { PlotKind } from "./state.js";
import { renderApp } from "./render.js";

const POLL_INTERVAL_MS = 1000;

export function mount(root: HTMLElement, baseUrl = ""): Store {
  const store = new Store(new ApiClient(baseUrl));
  const handlers = {
    onOpen: (id: string) => void store.open(id),
    onSelectSlice: (canonical: string) => void store.selectSlice(canonical),
    onSubmitDraft: (draft: PredicateDraft) => {
      const dims = store.state.detail?.spec.dimensions ?? [];
      void store.submitDraft(draft, validateDraft(draft, dims));
    },
    onPlotKind: (kind: PlotKind) => store.setPlotKind(kind),
    onToggleCate: () => store.toggleCateTable(),
    onRetry: () => void store.refresh(),
  };
  store.onChange((state) => {
    root.replaceChildren(renderApp(state, handlers));
  });
  void store.refresh();
  setInterval(() => {
    void store.poll();
    if (store.state.selectedId === null) void store.refresh();
  }, POLL_INTERVAL_MS);
  return store;
}

declare global {
  interface Window {
    ablazeStore?: Store;
  }
}

if (typeof document !== "undefined" && document.getElementById("app") !== null) {
  window.ablazeStore = mount(document.getElementById("app") as HTMLElement);
}
