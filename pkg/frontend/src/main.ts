// Entry point: backfill the feed from the API, then follow the live stream.
// The SSE reconnect loop is the only background activity; everything else
// runs off DOM events.

import { listErrors } from './api.js';
import { createFeed } from './feed.js';
import { renderErrorView } from './detail.js';
import { connectStream } from './sse.js';
import { STATE_COLORS, paint } from './theme.js';

async function boot(): Promise<void> {
  const feedPane = document.getElementById('feed');
  const detailPane = document.getElementById('detail');
  if (!feedPane || !detailPane) {
    throw new Error('dashboard containers missing from index.html');
  }
  paint(document.body, STATE_COLORS.page);

  const feed = createFeed(feedPane, (recordId) => {
    void renderErrorView(detailPane, recordId, {
      onResolved: (record) => feed.updateRecord(record),
    });
  });

  try {
    const page = await listErrors({ limit: 100 });
    // Newest-first page; prepend oldest first so the newest ends on top.
    for (const record of [...page.records].reverse()) {
      feed.addRecord(record);
    }
  } catch {
    // Backfill is best-effort; the stream still populates the feed.
  }

  connectStream(
    '/api/stream',
    {
      error: (event) => feed.addError(event),
      suggestion: (event) => feed.addSuggestion(event),
      narration: (event) => feed.applyNarration(event),
    },
    { onStatus: (status) => feed.setStatus(status) },
  );
}

void boot();
