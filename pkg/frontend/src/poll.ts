/** Repeating fetch with cancellation; screens cancel their poller on exit. */
export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private action: () => Promise<void>,
    private intervalMs = 2000,
  ) {}

  start(): void {
    if (this.timer !== null) {
      return;
    }
    void this.action();
    this.timer = setInterval(() => {
      void this.action();
    }, this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  running(): boolean {
    return this.timer !== null;
  }
}
