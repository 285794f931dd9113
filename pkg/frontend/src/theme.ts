// Severity and family color tokens plus the WCAG contrast math that keeps
// them honest. Banner rule: Critical is always red; otherwise resource
// problems go yellow and type issues purple; every other error is red,
// which also covers the canonical red KeyError header.

import type { Severity, Family } from './types.js';

export interface ColorPair {
  fg: string;
  bg: string;
}

export const SEVERITY_COLORS: Record<Severity, ColorPair> = {
  Critical: { fg: '#ffffff', bg: '#b91c1c' },
  High: { fg: '#ffffff', bg: '#c2410c' },
  Warning: { fg: '#1f2937', bg: '#fbbf24' },
  Info: { fg: '#ffffff', bg: '#475569' },
};

export const FAMILY_COLORS: Record<Family, ColorPair> = {
  SystemErrors: { fg: '#ffffff', bg: '#b91c1c' },
  CodeDefects: { fg: '#ffffff', bg: '#b91c1c' },
  TypeIssues: { fg: '#ffffff', bg: '#7e22ce' },
  ResourceProblems: { fg: '#1f2937', bg: '#facc15' },
  LogicalFlaws: { fg: '#ffffff', bg: '#b91c1c' },
};

export const STATE_COLORS = {
  page: { fg: '#1f2937', bg: '#f8fafc' },
  code: { fg: '#0f172a', bg: '#f1f5f9' },
  errorLine: { fg: '#7f1d1d', bg: '#fee2e2' },
  resolved: { fg: '#ffffff', bg: '#15803d' },
  narrating: { fg: '#1f2937', bg: '#e2e8f0' },
  suggestion: { fg: '#1e3a8a', bg: '#dbeafe' },
  link: { fg: '#1d4ed8', bg: '#f8fafc' },
  apiError: { fg: '#b91c1c', bg: '#f8fafc' },
} as const;

export function bannerColors(cls: { severity: string; family: string }): ColorPair {
  if (cls.severity === 'Critical') {
    return SEVERITY_COLORS.Critical;
  }
  const family = FAMILY_COLORS[cls.family as Family];
  return family ?? SEVERITY_COLORS.Critical;
}

export function severityBadge(severity: string): ColorPair {
  return SEVERITY_COLORS[severity as Severity] ?? SEVERITY_COLORS.Info;
}

/** sRGB relative luminance per WCAG 2.1. */
export function relativeLuminance(hex: string): number {
  const raw = hex.replace('#', '');
  const channel = (i: number) => {
    const c = parseInt(raw.slice(i, i + 2), 16) / 255;
    return c <= 0.04045 ? c / 12.92 : Math.pow((c + 0.055) / 1.055, 2.4);
  };
  return 0.2126 * channel(0) + 0.7152 * channel(2) + 0.0722 * channel(4);
}

export function contrastRatio(a: string, b: string): number {
  const la = relativeLuminance(a);
  const lb = relativeLuminance(b);
  const [hi, lo] = la >= lb ? [la, lb] : [lb, la];
  return (hi + 0.05) / (lo + 0.05);
}

/** Every fg/bg pair the UI can render, for the contrast property check. */
export function themedPairs(): Array<{ name: string; fg: string; bg: string }> {
  const pairs: Array<{ name: string; fg: string; bg: string }> = [];
  for (const [name, pair] of Object.entries(SEVERITY_COLORS)) {
    pairs.push({ name: `severity ${name}`, ...pair });
  }
  for (const [name, pair] of Object.entries(FAMILY_COLORS)) {
    pairs.push({ name: `family ${name}`, ...pair });
  }
  for (const [name, pair] of Object.entries(STATE_COLORS)) {
    pairs.push({ name: `state ${name}`, ...pair });
  }
  return pairs;
}

export function paint(el: HTMLElement, pair: ColorPair): void {
  el.style.color = pair.fg;
  el.style.backgroundColor = pair.bg;
}
