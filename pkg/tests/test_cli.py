"""Command-line surface: formats, exit codes, determinism."""

import json

import numpy as np
import pytest

from rdk.cli import dispatch
from rdk.cost_volume import DepthCandidates, build_cost_volume
from rdk.dist_prior import Histogram, HistogramSpec, kl_loss, soft_histogram
from rdk.geometry import Intrinsics, Pose, warp
from rdk.losses import assemble_real
from rdk.metrics import EvalRange, evaluate
from rdk.reweighting import consistency_map
from rdk.scene_oracle import SceneSpec, render
from rdk.tensor_io import read_tensor, write_tensor


def _camera_json(path, fx=100.0, fy=100.0, cx=15.5, cy=11.5,
                 theta=(0.0, 0.0, 0.0), trans=(0.0, 0.0, 0.0)):
    path.write_text(json.dumps({"fx": fx, "fy": fy, "cx": cx, "cy": cy,
                                "theta": list(theta), "trans": list(trans)}))
    return str(path)


@pytest.fixture()
def depth_file(tmp_path):
    rng = np.random.RandomState(0)
    depth = rng.uniform(4.0, 79.0, (24, 32)).astype(np.float32)
    path = tmp_path / "depth.rdt"
    write_tensor(depth, path)
    return path, depth


def test_hist_happy_path_prints_json(tmp_path, depth_file, capsys):
    path, depth = depth_file
    code = dispatch(["hist", "--depth", str(path),
                     "--dmin", "3.5", "--dmax", "80", "--bins", "100"])
    captured = capsys.readouterr()
    assert code == 0
    doc = json.loads(captured.out)
    assert doc["spec"] == {"d_min": 3.5, "d_max": 80.0, "bins": 100,
                           "bandwidth": 0.03825}
    expected = soft_histogram(depth, HistogramSpec()).probs
    assert np.abs(np.array(doc["probs"]) - expected).max() < 1e-12
    assert captured.err.startswith("config[hist]:")


def test_hist_aggregates_multiple_maps(tmp_path, capsys):
    rng = np.random.RandomState(1)
    paths = []
    maps = []
    for i in range(3):
        d = rng.uniform(4, 79, (8, 8)).astype(np.float32)
        p = tmp_path / f"d{i}.rdt"
        write_tensor(d, p)
        paths.append(p)
        maps.append(d)
    args = ["hist"]
    for p in paths:
        args += ["--depth", str(p)]
    code = dispatch(args + ["--json-out", str(tmp_path / "agg.json")])
    assert code == 0
    doc = json.loads((tmp_path / "agg.json").read_text())
    mean = np.mean([soft_histogram(m).probs for m in maps], axis=0)
    assert np.abs(np.array(doc["probs"]) - mean).max() < 1e-12


def test_hist_ascii_plot(tmp_path, depth_file, capsys):
    path, _ = depth_file
    assert dispatch(["hist", "--depth", str(path), "--bins", "10", "--ascii"]) == 0
    out = capsys.readouterr().out
    assert "|" in out and "#" in out


def test_klloss_roundtrip_through_files(tmp_path, capsys):
    rng = np.random.RandomState(2)
    spec = HistogramSpec(bins=20)
    adv = Histogram(spec, rng.dirichlet(np.ones(20)))
    day = Histogram(spec, rng.dirichlet(np.ones(20)))
    for name, hist in (("adv", adv), ("day", day)):
        doc = {"spec": {"d_min": spec.d_min, "d_max": spec.d_max,
                        "bins": spec.bins, "bandwidth": spec.bandwidth},
               "probs": hist.probs.tolist()}
        (tmp_path / f"{name}.json").write_text(json.dumps(doc))
    code = dispatch(["klloss", "--adv", str(tmp_path / "adv.json"),
                     "--day", str(tmp_path / "day.json")])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["kl"] == pytest.approx(kl_loss(adv, day)[0], rel=1e-12)


def test_klloss_spec_mismatch_exits_one(tmp_path, capsys):
    a = {"spec": {"d_min": 3.5, "d_max": 80.0, "bins": 100, "bandwidth": 0.03825},
         "probs": [0.01] * 100}
    b = {"spec": {"d_min": 3.5, "d_max": 80.0, "bins": 50, "bandwidth": 0.03825},
         "probs": [0.02] * 50}
    (tmp_path / "a.json").write_text(json.dumps(a))
    (tmp_path / "b.json").write_text(json.dumps(b))
    code = dispatch(["klloss", "--adv", str(tmp_path / "a.json"),
                     "--day", str(tmp_path / "b.json")])
    err = capsys.readouterr().err
    assert code == 1
    assert "bins" in err or "spec" in err


def test_warp_identity_through_files(tmp_path, depth_file, capsys):
    rng = np.random.RandomState(3)
    source = rng.standard_normal((2, 24, 32)).astype(np.float32)
    src = tmp_path / "src.rdt"
    write_tensor(source, src)
    cam = _camera_json(tmp_path / "cam.json")
    out = tmp_path / "warped.rdt"
    mask_out = tmp_path / "mask.rdt"
    code = dispatch(["warp", "--source", str(src), "--camera", cam,
                     "--depth-const", "7.0", "--out", str(out),
                     "--mask-out", str(mask_out)])
    assert code == 0
    assert read_tensor(out).tobytes() == source.tobytes()
    assert (read_tensor(mask_out) == 1.0).all()


def test_warp_matches_library_call(tmp_path, capsys):
    rng = np.random.RandomState(4)
    source = rng.standard_normal((2, 24, 32)).astype(np.float32)
    depth = rng.uniform(5.0, 20.0, (24, 32)).astype(np.float32)
    src, dep = tmp_path / "src.rdt", tmp_path / "dep.rdt"
    write_tensor(source, src)
    write_tensor(depth, dep)
    theta, trans = (0.01, -0.02, 0.03), (0.2, 0.1, -0.05)
    cam = _camera_json(tmp_path / "cam.json", theta=theta, trans=trans)
    out = tmp_path / "warped.rdt"
    code = dispatch(["warp", "--source", str(src), "--camera", cam,
                     "--depth", str(dep), "--out", str(out)])
    assert code == 0
    expected, _ = warp(source, Pose(np.array(theta), np.array(trans)), depth,
                       Intrinsics(100.0, 100.0, 15.5, 11.5))
    assert np.array_equal(read_tensor(out), expected)


def test_costvol_files_and_sidecar(tmp_path, capsys):
    spec = SceneSpec(height=24, width=48, channels=2,
                     intrinsics=Intrinsics(80.0, 80.0, 23.5, 11.5),
                     pose=Pose(np.zeros(3), np.array([2.0, 0.0, 0.0])))
    scene = render(spec)
    ft, fp = tmp_path / "ft.rdt", tmp_path / "fp.rdt"
    write_tensor(scene.feat_t, ft)
    write_tensor(scene.feat_prev, fp)
    cam = _camera_json(tmp_path / "cam.json", fx=80.0, fy=80.0, cx=23.5, cy=11.5,
                       trans=(2.0, 0.0, 0.0))
    out, sidecar = tmp_path / "cv.rdt", tmp_path / "cv.json"
    best = tmp_path / "best.rdt"
    code = dispatch(["costvol", "--feat-t", str(ft), "--feat-prev", str(fp),
                     "--camera", cam, "--num", "8", "--out", str(out),
                     "--sidecar", str(sidecar), "--best-depth", str(best)])
    assert code == 0
    volume = read_tensor(out)
    assert volume.shape == (8, 24, 48)
    doc = json.loads(sidecar.read_text())
    assert doc["mode"] == "difference"
    cands = DepthCandidates.inverse_depth(num=8)
    assert np.abs(np.array(doc["candidates"]) - cands.values).max() < 1e-12
    oracle = build_cost_volume(scene.feat_t, scene.feat_prev, spec.pose, cands,
                               spec.intrinsics)
    assert np.array_equal(volume, oracle.volume)
    assert read_tensor(best).shape == (24, 48)


def test_consistency_writes_rdt_and_pgm(tmp_path, capsys):
    rng = np.random.RandomState(5)
    d_syn = rng.uniform(4, 79, (16, 16)).astype(np.float32)
    d_day = rng.uniform(4, 79, (16, 16)).astype(np.float32)
    syn, day = tmp_path / "syn.rdt", tmp_path / "day.rdt"
    write_tensor(d_syn, syn)
    write_tensor(d_day, day)
    out, pgm = tmp_path / "conf.rdt", tmp_path / "conf.pgm"
    code = dispatch(["consistency", "--syn", str(syn), "--day", str(day),
                     "--out", str(out), "--pgm", str(pgm)])
    assert code == 0
    conf = read_tensor(out)
    expected = consistency_map(d_syn, d_day).confidence.astype(np.float32)
    assert np.array_equal(conf, expected)
    blob = pgm.read_bytes()
    assert blob.startswith(b"P5\n16 16\n255\n")
    assert len(blob) == len(b"P5\n16 16\n255\n") + 256


def test_losses_stage_real(tmp_path, capsys):
    terms = {"consistent_depth": 0.4, "distribution": 2.0,
             "cost_volume": 0.25, "pose": 0.1}
    (tmp_path / "terms.json").write_text(json.dumps(terms))
    code = dispatch(["losses", "--stage", "real",
                     "--terms", str(tmp_path / "terms.json")])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total"] == pytest.approx(assemble_real(terms).total, rel=1e-15)
    assert doc["weights"]["distribution"] == 0.01


def test_losses_wrong_keys_exit_one(tmp_path, capsys):
    (tmp_path / "terms.json").write_text(json.dumps({"distill": 1.0}))
    code = dispatch(["losses", "--stage", "real",
                     "--terms", str(tmp_path / "terms.json")])
    assert code == 1


def test_metrics_single_pair_csv(tmp_path, capsys):
    rng = np.random.RandomState(6)
    gt = rng.uniform(1.0, 70.0, (12, 12)).astype(np.float32)
    pred = (gt * 1.1).astype(np.float32)
    p, g = tmp_path / "p.rdt", tmp_path / "g.rdt"
    write_tensor(pred, p)
    write_tensor(gt, g)
    code = dispatch(["metrics", "--pred", str(p), "--gt", str(g)])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "file,abs_rel,sq_rel,rmse,delta1,n_valid"
    fields = lines[1].split(",")
    row = evaluate(read_tensor(p), read_tensor(g), EvalRange(0.1, 80.0))
    assert fields[0] == str(p)
    assert float(fields[1]) == pytest.approx(row.abs_rel, rel=1e-10)
    assert int(fields[5]) == row.n_valid


def test_metrics_manifest_with_aggregate(tmp_path, capsys):
    rng = np.random.RandomState(7)
    lines = []
    for i in range(2):
        gt = rng.uniform(1.0, 45.0, (8, 8)).astype(np.float32)
        pred = rng.uniform(1.0, 45.0, (8, 8)).astype(np.float32)
        pp, gp = tmp_path / f"p{i}.rdt", tmp_path / f"g{i}.rdt"
        write_tensor(pred, pp)
        write_tensor(gt, gp)
        lines.append(f"{pp},{gp}")
    manifest = tmp_path / "pairs.csv"
    manifest.write_text("\n".join(lines) + "\n")
    out_csv = tmp_path / "rows.csv"
    code = dispatch(["metrics", "--manifest", str(manifest), "--lo", "0.1",
                     "--hi", "50", "--out", str(out_csv)])
    assert code == 0
    rows = out_csv.read_text().strip().splitlines()
    assert len(rows) == 4  # header + 2 images + aggregate
    assert rows[-1].startswith("aggregate,")


def test_metrics_missing_file_exits_one(tmp_path, capsys):
    code = dispatch(["metrics", "--pred", str(tmp_path / "nope.rdt"),
                     "--gt", str(tmp_path / "nope.rdt")])
    assert code == 1


def test_oracle_gen_writes_manifest_and_tensors(tmp_path, capsys):
    outdir = tmp_path / "scene"
    code = dispatch(["oracle", "gen", "--outdir", str(outdir), "--height", "16",
                     "--width", "24", "--channels", "2"])
    assert code == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    for name in ("feat_t", "feat_prev", "depth_gt", "depth_prev"):
        grid = read_tensor(manifest["files"][name])
        assert grid.ndim in (2, 3)
    assert manifest["scene"]["z0"] == 41.75
    assert manifest["camera"]["trans"] == [5.0, 0.0, 0.0]


def test_usage_errors_exit_two(capsys):
    assert dispatch(["hist"]) == 2                      # missing required
    assert dispatch(["levitate"]) == 2                  # unknown command
    assert dispatch(["metrics", "--bogus-flag", "1"]) == 2
    assert dispatch([]) == 2


def test_help_exits_zero_and_documents_defaults(capsys):
    assert dispatch(["hist", "--help"]) == 0
    text = capsys.readouterr().out
    assert "3.5" in text and "80" in text and "100" in text
    assert dispatch(["consistency", "--help"]) == 0
    text = capsys.readouterr().out
    assert "1.0" in text


def test_domain_error_bad_tensor_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.rdt"
    bad.write_bytes(b"XXXX" + b"\x00" * 12)
    code = dispatch(["hist", "--depth", str(bad)])
    assert code == 1
    assert "bad-magic" in capsys.readouterr().err
