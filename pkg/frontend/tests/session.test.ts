import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { applyEdit, EditSession, replaySession, SessionStep } from "../src/session.js";
import { makeMockService } from "./mock_service.js";

const source: SessionStep = {
  image: "png:source",
  instruction: null,
  cfgText: 3,
  cfgImg: 1,
  seed: 7,
  metrics: null,
};

async function recordThreeSteps(api: ApiClient): Promise<EditSession> {
  let session = EditSession.start(source);
  session = await applyEdit(session, api, { field: "shape", value: "square" },
    { seed: 11, cfgText: 2, cfgImg: 1 });
  session = await applyEdit(session, api, { field: "size", value: "large" },
    { seed: 12, cfgText: 3, cfgImg: 1 });
  session = await applyEdit(session, api, { field: "shape", value: "circle" },
    { seed: 13, cfgText: 4, cfgImg: 1 });
  return session;
}

describe("EditSession", () => {
  it("appends immutably: the previous session object is unchanged", async () => {
    const { fetchFn } = makeMockService();
    const api = new ApiClient("", fetchFn);
    const s0 = EditSession.start(source);
    const s1 = await applyEdit(s0, api, { field: "size", value: "large" },
      { seed: 1, cfgText: 2, cfgImg: 1 });
    expect(s0.steps.length).toBe(1);
    expect(s1.steps.length).toBe(2);
    expect(s1.id).toBe(s0.id);
  });

  it("chains step inputs: step n's request image is step n-1's output", async () => {
    const { fetchFn } = makeMockService();
    const session = await recordThreeSteps(new ApiClient("", fetchFn));
    const reqs = session.replayRequests();
    expect(reqs.length).toBe(3);
    expect(reqs[0].image).toBe(source.image);
    expect(reqs[1].image).toBe(session.steps[1].image);
    expect(reqs[2].image).toBe(session.steps[2].image);
  });

  it("replays a recorded 3-step session byte-exactly", async () => {
    const { fetchFn } = makeMockService();
    const api = new ApiClient("", fetchFn);
    const session = await recordThreeSteps(api);
    const replayed = await replaySession(session, api);
    expect(replayed).toEqual(session.steps.slice(1).map((s) => s.image));
  });

  it("replay issues the identical request bodies", async () => {
    const record = makeMockService();
    const api = new ApiClient("", record.fetchFn);
    const session = await recordThreeSteps(api);
    const recorded = record.requests.filter((r) => r.path === "/edit").map((r) => r.body);

    const replay = makeMockService();
    await replaySession(session, new ApiClient("", replay.fetchFn));
    const replayed = replay.requests.map((r) => r.body);
    expect(replayed).toEqual(recorded);
  });

  it("branching shares the prefix and diverges after", async () => {
    const { fetchFn } = makeMockService();
    const api = new ApiClient("", fetchFn);
    const session = await recordThreeSteps(api);
    const branch = session.branchFrom(1);
    expect(branch.id).not.toBe(session.id);
    expect(branch.steps.length).toBe(2);
    expect(branch.steps[0]).toBe(session.steps[0]);
    expect(branch.steps[1]).toBe(session.steps[1]);

    const extended = await applyEdit(branch, api, { field: "size", value: "small" },
      { seed: 99, cfgText: 5, cfgImg: 1 });
    expect(extended.steps.length).toBe(3);
    expect(session.steps.length).toBe(4); // original untouched
    expect(extended.steps[2].image).not.toBe(session.steps[2].image);
  });

  it("a failed edit leaves the session untouched", async () => {
    const { fetchFn } = makeMockService({ failCfg: 2 });
    const api = new ApiClient("", fetchFn);
    const s0 = EditSession.start(source);
    await expect(
      applyEdit(s0, api, { field: "shape", value: "square" }, { seed: 1, cfgText: 2, cfgImg: 1 }),
    ).rejects.toBeInstanceOf(ApiError);
    expect(s0.steps.length).toBe(1);
  });

  it("rejects branching outside the history", async () => {
    const s0 = EditSession.start(source);
    expect(() => s0.branchFrom(5)).toThrow(/outside history/);
  });
});
