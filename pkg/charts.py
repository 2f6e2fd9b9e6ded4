"""
Distribution Chart Module.

Draws pie charts of the emotion and language distributions of a fused
corpus as PNG files, one slice per category with a legend giving the count
and share of each.
"""

import logging
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from manifest import DistributionReport

log = logging.getLogger(__name__)

RGBColor = tuple[int, int, int]
HexColor = str

CHART_SIZE = (720, 420)
PIE_BOX = (30, 60, 330, 360)
LEGEND_LEFT = 370
LEGEND_TOP = 80
LEGEND_ROW = 34
BACKGROUND = "#FFFFFF"
TEXT_COLOR = "#1A1A1A"

# One color per emotion, kept stable across charts
EMOTION_COLORS: dict[str, HexColor] = {
    "anger": "#E53935",
    "happiness": "#FFB300",
    "neutral": "#90A4AE",
    "sadness": "#1E88E5",
    "surprise": "#8E24AA",
    "disgust": "#43A047",
    "fear": "#3E2723",
}

# Cycled for categories without a fixed color
SLICE_PALETTE: list[HexColor] = ["#FF6B6B", "#0D47A1", "#FFAB91", "#4A148C", "#20B2AA", "#FFD700", "#1B5E20"]


def hex_to_rgb(hex_color: HexColor) -> RGBColor:
    """
    Convert a hex color string to an RGB tuple.

    Args:
        hex_color: Color in hex format (e.g., "#FF5722" or "FF5722").

    Returns:
        Tuple of (red, green, blue) values (0-255).
    """
    hex_color = hex_color.lstrip("#")
    return (int(hex_color[0:2], 16), int(hex_color[2:4], 16), int(hex_color[4:6], 16))


def slice_color(name: str, index: int) -> RGBColor:
    return hex_to_rgb(EMOTION_COLORS.get(name, SLICE_PALETTE[index % len(SLICE_PALETTE)]))


def draw_pie(title: str, rows: dict[str, tuple[int, float]]) -> Image.Image:
    """
    Render one pie chart.

    Args:
        title: Caption drawn above the pie.
        rows: Category -> (count, fraction), drawn clockwise from 12 o'clock.

    Returns:
        RGB image of CHART_SIZE.
    """
    image = Image.new("RGB", CHART_SIZE, hex_to_rgb(BACKGROUND))
    draw = ImageDraw.Draw(image)
    font = ImageFont.load_default()
    text_rgb = hex_to_rgb(TEXT_COLOR)

    draw.text((PIE_BOX[0], 20), title, font=font, fill=text_rgb)

    if not rows:
        draw.text((PIE_BOX[0], PIE_BOX[1] + 20), "no data", font=font, fill=text_rgb)
        return image

    angle = -90.0
    for index, (name, (count, fraction)) in enumerate(rows.items()):
        color = slice_color(name, index)
        sweep = 360.0 * fraction
        if sweep > 0:
            draw.pieslice(PIE_BOX, start=angle, end=angle + sweep, fill=color, outline=hex_to_rgb(BACKGROUND))
        angle += sweep

        top = LEGEND_TOP + index * LEGEND_ROW
        draw.rectangle([LEGEND_LEFT, top, LEGEND_LEFT + 18, top + 18], fill=color)
        draw.text((LEGEND_LEFT + 28, top + 4), f"{name}  {count}  ({fraction * 100:.1f}%)", font=font, fill=text_rgb)
    return image


def write_distribution_charts(report: DistributionReport, out_dir: str | Path) -> list[Path]:
    """Write emotion_distribution.png and language_distribution.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for filename, title, rows in (
        ("emotion_distribution.png", f"Emotion distribution ({report.total} utterances)", report.emotions),
        ("language_distribution.png", f"Language distribution ({report.total} utterances)", report.languages),
    ):
        path = out_dir / filename
        draw_pie(title, rows).save(path, format="PNG")
        written.append(path)
    log.info(f"🖼️ Wrote {len(written)} charts to {out_dir}")
    return written
