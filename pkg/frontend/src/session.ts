/** Edit session: an immutable, append-only history of edit steps.
 *
 * Step 0 is the generated (or uploaded) source image; step n's input image
 * is step n-1's output. Appending returns a new session; branching copies
 * a prefix into a fresh session, sharing the step objects.
 */

import { ApiClient, EditRequest, Instruction, Metrics } from "./api.js";

export interface SessionStep {
  readonly image: string; // base64 PNG output of this step
  readonly instruction: Instruction | null; // null for step 0
  readonly cfgText: number;
  readonly cfgImg: number;
  readonly seed: number;
  readonly metrics: Metrics | null;
}

let nextSessionId = 1;

export class EditSession {
  private constructor(
    readonly id: number,
    readonly steps: readonly SessionStep[],
  ) {}

  static start(source: SessionStep): EditSession {
    return new EditSession(nextSessionId++, [source]);
  }

  get lastImage(): string {
    return this.steps[this.steps.length - 1].image;
  }

  append(step: SessionStep): EditSession {
    return new EditSession(this.id, [...this.steps, step]);
  }

  /** New session sharing steps 0..index (inclusive). */
  branchFrom(index: number): EditSession {
    if (index < 0 || index >= this.steps.length) {
      throw new Error(`branch index ${index} outside history of ${this.steps.length} steps`);
    }
    return new EditSession(nextSessionId++, this.steps.slice(0, index + 1));
  }

  /** The exact edit requests that produced steps 1..n, rebuilt from history. */
  replayRequests(): EditRequest[] {
    const reqs: EditRequest[] = [];
    for (let n = 1; n < this.steps.length; n++) {
      const step = this.steps[n];
      if (!step.instruction) {
        throw new Error(`step ${n} has no instruction`);
      }
      reqs.push({
        image: this.steps[n - 1].image,
        instruction: step.instruction,
        seed: step.seed,
        cfg_text: step.cfgText,
        cfg_img: step.cfgImg,
      });
    }
    return reqs;
  }
}

/** Issue one edit and append the result. The session is only extended once
 * the service answers; failures leave it untouched. */
export async function applyEdit(
  session: EditSession,
  api: ApiClient,
  instruction: Instruction,
  opts: { seed: number; cfgText: number; cfgImg: number },
): Promise<EditSession> {
  const res = await api.edit({
    image: session.lastImage,
    instruction,
    seed: opts.seed,
    cfg_text: opts.cfgText,
    cfg_img: opts.cfgImg,
  });
  return session.append({
    image: res.image,
    instruction,
    cfgText: opts.cfgText,
    cfgImg: opts.cfgImg,
    seed: opts.seed,
    metrics: res.metrics,
  });
}

/** Re-issue every recorded request in order; returns the replayed images
 * (step 1..n). Against the stateless service this reproduces the session's
 * images byte-for-byte. */
export async function replaySession(
  session: EditSession,
  api: ApiClient,
): Promise<string[]> {
  const images: string[] = [];
  let input = session.steps[0].image;
  for (const recorded of session.replayRequests()) {
    const res = await api.edit({ ...recorded, image: input });
    images.push(res.image);
    input = res.image;
  }
  return images;
}
