/** What-if panel: the same edit at several CFG values, identical seed, so
 * differences between cells are attributable to CFG alone. */

import { ApiClient, ApiError, Instruction, Metrics } from "./api.js";

export interface CompareCell {
  cfgText: number;
  ok: boolean;
  image?: string;
  metrics?: Metrics;
  error?: string;
}

export async function compareGrid(
  api: ApiClient,
  baseImage: string,
  instruction: Instruction,
  cfgList: readonly number[],
  seed: number,
  cfgImg: number = 1.0,
): Promise<CompareCell[]> {
  const settled = await Promise.allSettled(
    cfgList.map((cfg) =>
      api.edit({
        image: baseImage,
        instruction,
        seed,
        cfg_text: cfg,
        cfg_img: cfgImg,
      }),
    ),
  );
  return settled.map((res, i) => {
    if (res.status === "fulfilled") {
      return { cfgText: cfgList[i], ok: true, image: res.value.image, metrics: res.value.metrics };
    }
    const reason = res.reason;
    const msg = reason instanceof ApiError ? reason.message : String(reason);
    return { cfgText: cfgList[i], ok: false, error: msg };
  });
}
