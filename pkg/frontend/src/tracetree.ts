// Traceback tree: frames render outermost first, matching the order readers
// see in a terminal. Only the innermost three start expanded; everything
// further out sits behind a single disclosure so deep stacks stay scannable.

import type { WireFrame } from './types.js';
import { STATE_COLORS, paint } from './theme.js';

export const INNERMOST_VISIBLE = 3;

function frameRow(frame: WireFrame, expanded: boolean, doc: Document): HTMLLIElement {
  const li = doc.createElement('li');
  li.className = 'frame';

  const toggle = doc.createElement('button');
  toggle.type = 'button';
  toggle.className = 'frame-toggle';
  toggle.setAttribute('aria-expanded', String(expanded));
  toggle.textContent = `${frame.file}:${frame.line} in ${frame.function}`;
  li.appendChild(toggle);

  const code = doc.createElement('pre');
  code.className = 'frame-code';
  code.textContent = frame.code_line || '(no source)';
  paint(code, STATE_COLORS.code);
  code.hidden = !expanded;
  li.appendChild(code);

  toggle.addEventListener('click', () => {
    code.hidden = !code.hidden;
    toggle.setAttribute('aria-expanded', String(!code.hidden));
  });

  return li;
}

export function renderTraceTree(frames: WireFrame[], doc: Document = document): HTMLElement {
  const root = doc.createElement('div');
  root.className = 'trace-tree';

  const list = doc.createElement('ol');
  list.className = 'frame-list';

  const outerCount = Math.max(frames.length - INNERMOST_VISIBLE, 0);
  const outerItems: HTMLLIElement[] = [];

  frames.forEach((frame, index) => {
    const isInner = index >= outerCount;
    const row = frameRow(frame, isInner, doc);
    if (!isInner) {
      row.hidden = true;
      outerItems.push(row);
    }
    list.appendChild(row);
  });

  if (outerCount > 0) {
    const reveal = doc.createElement('button');
    reveal.type = 'button';
    reveal.className = 'frame-reveal';
    reveal.textContent = `Show ${outerCount} outer frame${outerCount === 1 ? '' : 's'}`;
    reveal.setAttribute('aria-expanded', 'false');
    reveal.addEventListener('click', () => {
      const show = outerItems[0]?.hidden ?? false;
      for (const item of outerItems) {
        item.hidden = !show;
      }
      reveal.setAttribute('aria-expanded', String(show));
      reveal.textContent = show
        ? `Hide ${outerCount} outer frame${outerCount === 1 ? '' : 's'}`
        : `Show ${outerCount} outer frame${outerCount === 1 ? '' : 's'}`;
    });
    root.appendChild(reveal);
  }

  root.appendChild(list);
  return root;
}
