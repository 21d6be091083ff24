# temporal/charts.py
from django.template.loader import render_to_string
from django.utils.html import escape

from core.exceptions import ValidationError

PALETTE = ('#1b9e77', '#d95f02', '#7570b3', '#e7298a', '#66a61e', '#e6ab02')
WIDTH, HEIGHT = 640, 360
MARGIN = {'left': 56, 'right': 120, 'top': 24, 'bottom': 44}


def _fmt(value):
    return f"{value:.2f}"


def render_confidence_svg(cohorts, title="Confidence progression"):
    """Line plot of cohort mean confidence per step with +-1 std error bars."""
    cohorts = list(cohorts)
    if not cohorts:
        raise ValidationError("nothing to plot")
    steps = len(cohorts[0].mean)
    if any(len(c.mean) != steps for c in cohorts):
        raise ValidationError("cohort curves disagree on the number of steps")
    plot = {
        'left': MARGIN['left'], 'right': WIDTH - MARGIN['right'],
        'top': MARGIN['top'], 'bottom': HEIGHT - MARGIN['bottom'],
    }
    plot['center'] = (plot['left'] + plot['right']) // 2
    plot['middle'] = (plot['top'] + plot['bottom']) // 2
    span_x = plot['right'] - plot['left']
    span_y = plot['bottom'] - plot['top']

    def x_at(step):
        return plot['left'] + (span_x * (step - 1) / (steps - 1) if steps > 1 else span_x / 2)

    def y_at(value):
        return plot['bottom'] - span_y * min(max(value, 0.0), 1.0)

    series = []
    for index, cohort in enumerate(cohorts):
        points, bars = [], []
        for step, (mean, std) in enumerate(zip(cohort.mean, cohort.std), start=1):
            x = x_at(step)
            points.append(f"{_fmt(x)},{_fmt(y_at(mean))}")
            bars.append({'x': _fmt(x), 'low': _fmt(y_at(mean - std)), 'high': _fmt(y_at(mean + std))})
        series.append({
            'label': escape(cohort.class_name),
            'color': PALETTE[index % len(PALETTE)],
            'points': " ".join(points),
            'bars': bars,
            'legend_y': plot['top'] + 8 + 18 * index,
        })
    every = max(1, steps // 10)
    context = {
        'width': WIDTH,
        'height': HEIGHT,
        'title': escape(title),
        'plot': plot,
        'series': series,
        'x_ticks': [{'x': _fmt(x_at(s)), 'label': s} for s in range(1, steps + 1) if (s - 1) % every == 0],
        'y_ticks': [{'y': _fmt(y_at(v / 4)), 'label': f"{v / 4:.2f}"} for v in range(5)],
    }
    return render_to_string('temporal/confidence_progression.svg', context)
