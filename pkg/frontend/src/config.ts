// Runtime configuration: the app is served statically and reads one config
// document (window.CAREKERNEL_CONFIG) telling it where the service lives.

export interface RuntimeConfig {
  serverUrl: string;
}

declare global {
  interface Window {
    CAREKERNEL_CONFIG?: RuntimeConfig;
  }
}

export function loadConfig(): RuntimeConfig {
  if (typeof window !== "undefined" && window.CAREKERNEL_CONFIG) {
    return window.CAREKERNEL_CONFIG;
  }
  return { serverUrl: "http://127.0.0.1:8760" };
}
