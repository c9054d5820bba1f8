import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { makeMockService } from "./mock_service.js";

describe("ApiClient", () => {
  it("round-trips vocab", async () => {
    const { fetchFn } = makeMockService();
    const vocab = await new ApiClient("", fetchFn).vocab();
    expect(vocab.fields.shape).toContain("triangle");
    expect(vocab.grammar).toMatch(/set <field> <value>/);
  });

  it("posts JSON bodies with the right content type", async () => {
    const mock = makeMockService();
    await new ApiClient("", mock.fetchFn).generate({
      factors: { shape: "circle", fg_color: "red", bg_color: "black", position: "center", size: "large" },
      seed: 1,
      cfg_text: 3,
    });
    expect(mock.requests[0].path).toBe("/generate");
    expect(mock.requests[0].body.seed).toBe(1);
  });

  it("maps service errors to ApiError with code and detail", async () => {
    const { fetchFn } = makeMockService({ failCfg: 9 });
    const api = new ApiClient("", fetchFn);
    try {
      await api.edit({ image: "png:x", instruction: { field: "size", value: "small" },
                       seed: 0, cfg_text: 9, cfg_img: 1 });
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      const e = err as ApiError;
      expect(e.status).toBe(400);
      expect(e.code).toBe("bad_cfg");
      expect(e.message).toBe("induced failure");
    }
  });
});
