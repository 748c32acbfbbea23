from src.api.run_manifest import JobStatus, RunManifest


def test_status_change_is_written_immediately(tmp_path):
    path = tmp_path / "manifest.json"
    manifest = RunManifest(path, seed=3, k_max=2, frame_ids=["000000", "000001"], config={"subcommand": "augment"})
    assert not path.exists()

    manifest.get_job("000000").update_status(JobStatus.COMPLETED, mesh_ids=["box", "box"])
    on_disk = RunManifest.load(path)
    assert [f["status"] for f in on_disk["frames"]] == ["completed", "pending"]
    assert on_disk["total_placements"] == 2
    assert on_disk["config"] == {"subcommand": "augment"}

    manifest.get_job("000001").update_status(JobStatus.FAILED, error="no calibration")
    on_disk = RunManifest.load(path)
    assert on_disk["frames"][1]["status"] == "failed"
    assert on_disk["frames"][1]["error"] == "no calibration"


def test_unknown_frame_has_no_job(tmp_path):
    manifest = RunManifest(tmp_path / "manifest.json", seed=0, k_max=0, frame_ids=["000000"])
    assert manifest.get_job("999999") is None
    assert manifest.to_dict()["config"] == {}
