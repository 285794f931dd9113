import { describe, expect, it } from 'vitest';
import {
  FAMILY_COLORS,
  SEVERITY_COLORS,
  bannerColors,
  contrastRatio,
  relativeLuminance,
  severityBadge,
  themedPairs,
} from '../src/theme.js';

describe('color mapping', () => {
  it('matches the theme table exactly', () => {
    expect(SEVERITY_COLORS).toEqual({
      Critical: { fg: '#ffffff', bg: '#b91c1c' },
      High: { fg: '#ffffff', bg: '#c2410c' },
      Warning: { fg: '#1f2937', bg: '#fbbf24' },
      Info: { fg: '#ffffff', bg: '#475569' },
    });
    expect(FAMILY_COLORS).toEqual({
      SystemErrors: { fg: '#ffffff', bg: '#b91c1c' },
      CodeDefects: { fg: '#ffffff', bg: '#b91c1c' },
      TypeIssues: { fg: '#ffffff', bg: '#7e22ce' },
      ResourceProblems: { fg: '#1f2937', bg: '#facc15' },
      LogicalFlaws: { fg: '#ffffff', bg: '#b91c1c' },
    });
  });

  it('keeps the documented family colors', () => {
    expect(FAMILY_COLORS.ResourceProblems.bg).toBe('#facc15'); // yellow
    expect(FAMILY_COLORS.TypeIssues.bg).toBe('#7e22ce'); // purple
    expect(FAMILY_COLORS.CodeDefects.bg).toBe('#b91c1c'); // red
  });

  it('always banners Critical in red, regardless of family', () => {
    for (const family of Object.keys(FAMILY_COLORS)) {
      expect(bannerColors({ severity: 'Critical', family }).bg).toBe('#b91c1c');
    }
  });

  it('banners a KeyError-style record (LogicalFlaws/Warning) in red', () => {
    expect(bannerColors({ severity: 'Warning', family: 'LogicalFlaws' }).bg).toBe('#b91c1c');
  });

  it('banners by family when severity is below Critical', () => {
    expect(bannerColors({ severity: 'Warning', family: 'ResourceProblems' }).bg).toBe('#facc15');
    expect(bannerColors({ severity: 'High', family: 'TypeIssues' }).bg).toBe('#7e22ce');
  });

  it('falls back to red for unknown families', () => {
    expect(bannerColors({ severity: 'Info', family: 'Mystery' }).bg).toBe('#b91c1c');
  });

  it('maps every severity to a distinct badge and defaults unknowns to Info', () => {
    const badges = Object.keys(SEVERITY_COLORS).map((s) => severityBadge(s).bg);
    expect(new Set(badges).size).toBe(badges.length);
    expect(severityBadge('whatever')).toEqual(SEVERITY_COLORS.Info);
  });
});

describe('contrast', () => {
  it('scores black on white at the WCAG maximum', () => {
    expect(contrastRatio('#000000', '#ffffff')).toBeCloseTo(21, 1);
    expect(contrastRatio('#ffffff', '#000000')).toBeCloseTo(21, 1);
    expect(relativeLuminance('#ffffff')).toBeCloseTo(1, 5);
    expect(relativeLuminance('#000000')).toBeCloseTo(0, 5);
  });

  it('meets 4.5:1 for every themed text/background pair', () => {
    const pairs = themedPairs();
    expect(pairs.length).toBeGreaterThanOrEqual(14);
    for (const pair of pairs) {
      const ratio = contrastRatio(pair.fg, pair.bg);
      expect(ratio, `${pair.name} (${pair.fg} on ${pair.bg}) = ${ratio.toFixed(2)}`)
        .toBeGreaterThanOrEqual(4.5);
    }
  });
});
