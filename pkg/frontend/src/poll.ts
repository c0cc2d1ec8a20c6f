export interface PollOptions {
  intervalMs: number;
  timeoutMs: number;
}

/**
 * Call `fn` every `intervalMs` until `done(value)` is true, reporting each
 * intermediate value through `onUpdate`.  Rejects if `timeoutMs` elapses
 * first or `fn` throws.
 */
export async function pollUntil<T>(
  fn: () => Promise<T>,
  done: (value: T) => boolean,
  opts: PollOptions,
  onUpdate?: (value: T) => void,
): Promise<T> {
  const deadline = Date.now() + opts.timeoutMs;
  for (;;) {
    const value = await fn();
    if (onUpdate) onUpdate(value);
    if (done(value)) return value;
    if (Date.now() >= deadline) {
      throw new Error(`polling timed out after ${opts.timeoutMs} ms`);
    }
    await sleep(opts.intervalMs);
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
