import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from openpyxl.styles import Font, PatternFill
from openpyxl.utils import get_column_letter

from services.logging import logger


FLOAT_FORMAT = '%.10g'

# fixed SVG ids and no date stamp keep plots reproducible
matplotlib.rcParams['svg.hashsalt'] = 'lpcfm'
SVG_METADATA = {'Date': None}


def prepare_output(out: Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info(f'Saved "{path}"')
    return path


def write_json(data: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + '\n', encoding='utf-8')
    logger.info(f'Saved "{path}"')
    return path


def trajectories_frame(trajectory: Sequence[np.ndarray]) -> pd.DataFrame:
    """Long table of Euler states: one row per (step, sample)."""
    states = np.asarray(trajectory, dtype=np.float64)
    if states.ndim == 2:
        states = states[:, None, :]
    steps, samples, dim = states.shape
    step_index, sample_index = np.meshgrid(np.arange(steps), np.arange(samples), indexing='ij')
    frame = pd.DataFrame({'step': step_index.ravel(), 'sample': sample_index.ravel()})
    coords = pd.DataFrame(states.reshape(steps * samples, dim), columns=[f'x{i}' for i in range(dim)])
    return pd.concat([frame, coords], axis=1)


# ------------------ Workbook ------------------

def export_workbook(sheets: Dict[str, pd.DataFrame], path: Path, title: Optional[str] = None) -> Path:
    """One sheet per table: bold header, fitted columns, failed rows and NaN cells highlighted."""
    path = Path(path)
    yellow = PatternFill(fill_type='solid', start_color='FFFF00', end_color='FFFF00')
    startrow = 1 if title else 0
    with pd.ExcelWriter(path, engine='openpyxl') as writer:
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name, index=False, startrow=startrow)
            ws = writer.sheets[name]
            if title:
                ws.cell(row=1, column=1, value=title).font = Font(bold=True)
            header_row = startrow + 1
            for cell in ws[header_row]:
                cell.font = Font(bold=True)
            for col in ws.columns:
                length = max(len(str(c.value)) for c in col if c.value is not None)
                ws.column_dimensions[col[0].column_letter].width = length + 2
            status_column = list(frame.columns).index('status') + 1 if 'status' in frame.columns else None
            for row_offset, (_, row) in enumerate(frame.iterrows()):
                excel_row = header_row + 1 + row_offset
                failed = status_column is not None and row['status'] != 'ok'
                for idx, value in enumerate(row, start=1):
                    if failed or (isinstance(value, float) and np.isnan(value)):
                        c = ws[f'{get_column_letter(idx)}{excel_row}']
                        c.font = Font(color='FF0000')
                        c.fill = yellow
    logger.info(f'Workbook saved to "{path}"')
    return path


# ------------------ Plots ------------------

def _save_svg(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, format='svg', bbox_inches='tight', metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f'Saved "{path}"')
    return path


def plot_comparison(summary: pd.DataFrame, labels: Sequence[str], path: Path, metric: str = 'distance to line') -> Path:
    """Metric per method against step budget, with the second − first gap as bars on a right axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    budgets = summary['budget'].to_numpy()
    positions = np.arange(len(budgets))
    gap_axis = ax.twinx()
    gap_axis.bar(positions, summary['gap'].to_numpy(), width=0.4, color='0.8', label=f'{labels[1]} − {labels[0]}')
    gap_axis.axhline(0.0, color='0.5', linewidth=0.5)
    gap_axis.set_ylabel('gap')
    for label, marker in zip(labels, ('o', 's')):
        ax.plot(positions, summary[f'distance_{label}'].to_numpy(), marker=marker, label=label)
    ax.set_zorder(gap_axis.get_zorder() + 1)
    ax.patch.set_visible(False)
    ax.set_xticks(positions)
    ax.set_xticklabels([str(b) for b in budgets])
    ax.set_xlabel('sampling steps')
    ax.set_ylabel(metric)
    handles, names = ax.get_legend_handles_labels()
    bar_handles, bar_names = gap_axis.get_legend_handles_labels()
    ax.legend(handles + bar_handles, names + bar_names, loc='upper right')
    return _save_svg(fig, path)


def plot_loss_curve(loss: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(loss['epoch'], loss['mean_loss'])
    ax.set_yscale('log')
    ax.set_xlabel('epoch')
    ax.set_ylabel('mean CFM loss')
    return _save_svg(fig, path)


def check_table(results: List[Any]) -> pd.DataFrame:
    return pd.DataFrame([
        {'check': r.name, 'value': r.value, 'threshold': r.threshold, 'passed': r.passed}
        for r in results
    ])
