"""
Flask front end for fltransfer.
Run with: python app.py
"""

import json
import logging
import os
import tempfile

import requests
from flask import Flask, Response, jsonify, render_template_string, request

from fltransfer.cli import cmd_fit, run_experiment
from fltransfer.config import RunConfig, config_hash, parse_config
from fltransfer.errors import ConfigError, FLTransferError, NumericalError
from fltransfer.fda import tasks_to_csv
from fltransfer.simgen import generate_scenario

logger = logging.getLogger(__name__)

app = Flask(__name__)
app.config["MAX_CONTENT_LENGTH"] = 64 * 1024 * 1024

INDEX_HTML = """
<!doctype html>
<title>fltransfer</title>
<h1>Transfer learning for functional linear regression</h1>

<h2>Simulate</h2>
<form id="simulate" method="post" action="/simulate">
  <p>POST a RunConfig JSON document to <code>/simulate</code>. Experiment kinds heatmap, mixture and
  rate return the result table as CSV; kind scenario returns the generated curves and responses.</p>
  <textarea name="config" rows="12" cols="80">{{ default_config }}</textarea><br>
  <button type="submit">Run</button>
</form>

<h2>Fit</h2>
<form method="post" action="/fit" enctype="multipart/form-data">
  <p>Curves CSV (curve_id, t, x): <input type="file" name="curves"></p>
  <p>Responses CSV (curve_id, y, task_id): <input type="file" name="responses"></p>
  <p>Config (optional JSON):<br><textarea name="config" rows="6" cols="80"></textarea></p>
  <button type="submit">Fit</button>
</form>
"""


def _error(e: Exception):
    status = 422 if isinstance(e, NumericalError) else 400
    logger.warning("request failed with %d: %s", status, e)
    return jsonify({"error": str(e), "type": type(e).__name__}), status


def _config_from_request(command: str) -> RunConfig:
    if request.is_json:
        d = request.get_json()
    else:
        text = (request.form.get("config") or "").strip()
        d = json.loads(text) if text else {}
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config({**d, "command": command})


@app.get("/")
def index():
    return render_template_string(INDEX_HTML, default_config=json.dumps(RunConfig().to_dict(), indent=2))


@app.post("/simulate")
def simulate():
    try:
        config = _config_from_request("simulate")
        if config.experiment.kind == "scenario":
            scenario = generate_scenario(config.scenario)
            curves_csv, responses_csv = tasks_to_csv([scenario.target, *scenario.sources])
            return jsonify({"config_hash": config_hash(config), "curves_csv": curves_csv,
                            "responses_csv": responses_csv})
        result = run_experiment(config)
    except (FLTransferError, ValueError) as e:
        return _error(e)
    return Response(result.to_csv(), mimetype="text/csv",
                    headers={"Content-Disposition": f"attachment; filename={result.kind}.csv"})


@app.post("/fit")
def fit():
    curves = request.files.get("curves")
    responses = request.files.get("responses")
    if curves is None or responses is None:
        return jsonify({"error": "upload both a curves and a responses CSV"}), 400
    try:
        config = _config_from_request("fit")
        with tempfile.TemporaryDirectory() as tmp:
            cpath = os.path.join(tmp, "curves.csv")
            rpath = os.path.join(tmp, "responses.csv")
            curves.save(cpath)
            responses.save(rpath)
            report = cmd_fit(config, [cpath], [rpath])
    except (FLTransferError, ValueError, requests.RequestException) as e:
        return _error(e)
    return jsonify(report)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    app.run(debug=False)
