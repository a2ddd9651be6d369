"""Built-in compute behaviours.

Payloads are CSV-like tabular bytes or JSON parameter-vector blobs. All
behaviours are deterministic pure functions of their inputs and
parameters, so distributed execution can be compared bit-exactly against
a centralised run of the same functions.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Mapping

from .assets import BehaviorRegistry


def parse_table(payload: bytes) -> tuple[list[str], list[list[str]]]:
    text = payload.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row]
    if not rows:
        raise ValueError("empty table")
    return rows[0], rows[1:]


def render_table(header: list[str], rows: list[list[str]]) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue().encode("utf-8")


def params_blob(weights: list[float]) -> bytes:
    return json.dumps({"weights": weights}, sort_keys=True).encode()


def parse_params(payload: bytes) -> list[float]:
    return [float(w) for w in json.loads(payload)["weights"]]


def _single_table(inputs: Mapping[str, bytes]) -> tuple[list[str], list[list[str]]]:
    if len(inputs) != 1:
        raise ValueError(f"expected exactly one input, got {sorted(inputs)}")
    return parse_table(next(iter(inputs.values())))


def _one_output(output_names: tuple[str, ...], payload: bytes) -> dict[str, bytes]:
    if len(output_names) != 1:
        raise ValueError(f"expected exactly one output, got {output_names}")
    return {output_names[0]: payload}


def concat(inputs, parameters, output_names):
    """Concatenate tables with identical headers, inputs in name order."""
    header = None
    rows: list[list[str]] = []
    for name in sorted(inputs):
        h, r = parse_table(inputs[name])
        if header is None:
            header = h
        elif h != header:
            raise ValueError(f"header mismatch in input {name!r}")
        rows.extend(r)
    assert header is not None
    return _one_output(output_names, render_table(header, rows))


def select_columns(inputs, parameters, output_names):
    header, rows = _single_table(inputs)
    columns = list(parameters["columns"])
    indices = [header.index(c) for c in columns]
    return _one_output(output_names, render_table(
        columns, [[row[i] for i in indices] for row in rows]
    ))


def row_filter(inputs, parameters, output_names):
    """Keep rows whose column equals the given value."""
    header, rows = _single_table(inputs)
    index = header.index(parameters["column"])
    value = str(parameters["equals"])
    return _one_output(output_names, render_table(
        header, [row for row in rows if row[index] == value]
    ))


def aggregate_mean(inputs, parameters, output_names):
    """Column means of a numeric table, one output row."""
    header, rows = _single_table(inputs)
    if not rows:
        raise ValueError("cannot aggregate an empty table")
    means = []
    for i in range(len(header)):
        total = 0.0
        for row in rows:
            total += float(row[i])
        means.append(repr(total / len(rows)))
    return _one_output(output_names, render_table(header, [means]))


def linreg_train_step(inputs, parameters, output_names):
    """One gradient-descent step of linear regression on local data.

    Inputs: ``params`` (weight blob) and ``data`` (table whose last column
    is the target, the rest features). Parameter ``lr`` is the step size.
    """
    weights = parse_params(inputs["params"])
    header, rows = parse_table(inputs["data"])
    lr = float(parameters.get("lr", 0.1))
    n_features = len(header) - 1
    if len(weights) != n_features:
        raise ValueError(f"expected {n_features} weights, got {len(weights)}")
    gradient = [0.0] * n_features
    for row in rows:
        features = [float(v) for v in row[:n_features]]
        target = float(row[n_features])
        prediction = sum(w * x for w, x in zip(weights, features))
        error = prediction - target
        for i in range(n_features):
            gradient[i] += 2.0 * error * features[i]
    count = len(rows)
    updated = [w - lr * g / count for w, g in zip(weights, gradient)]
    return _one_output(output_names, params_blob(updated))


def param_merge(inputs, parameters, output_names):
    """Elementwise mean of parameter blobs, inputs in name order."""
    vectors = [parse_params(inputs[name]) for name in sorted(inputs)]
    length = len(vectors[0])
    if any(len(v) != length for v in vectors):
        raise ValueError("parameter vectors differ in length")
    merged = [sum(v[i] for v in vectors) / len(vectors) for i in range(length)]
    return _one_output(output_names, params_blob(merged))


def builtin_behaviors() -> BehaviorRegistry:
    registry = BehaviorRegistry()
    registry.register("concat", concat)
    registry.register("select-columns", select_columns)
    registry.register("row-filter", row_filter)
    registry.register("aggregate-mean", aggregate_mean)
    registry.register("linreg-train-step", linreg_train_step)
    registry.register("param-merge", param_merge)
    return registry
