import type { ProjectSummary } from "./types.js";

export type Screen =
  | "concept-editor"
  | "validation-labeler"
  | "rationale-review"
  | "strategy-dashboard"
  | "al-console";

export const SCREENS: Screen[] = [
  "concept-editor",
  "validation-labeler",
  "rationale-review",
  "strategy-dashboard",
  "al-console",
];

/** Client-side session: which project, which screen, last summary snapshot.
 * Everything else is server truth fetched on demand. */
export class UiSession {
  projectId: string | null = null;
  screen: Screen = "concept-editor";
  lastSummary: ProjectSummary | null = null;

  selectProject(projectId: string): void {
    this.projectId = projectId;
    this.lastSummary = null;
  }

  navigate(screen: Screen): void {
    this.screen = screen;
  }

  progress(): { labeled: number; total: number } {
    if (this.lastSummary === null) {
      return { labeled: 0, total: 0 };
    }
    return this.lastSummary.validation;
  }
}

export function screenFromHash(hash: string): Screen {
  const name = hash.replace(/^#\/?/, "");
  return (SCREENS as string[]).includes(name) ? (name as Screen) : "concept-editor";
}
