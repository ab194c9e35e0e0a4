import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // integration tests spawn a python backend per suite
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
