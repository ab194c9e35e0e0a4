"""Copy-on-write filesystems over shared templates."""
import pytest
from hypothesis import given
from hypothesis import strategies as st

from redsim.errors import FileError
from redsim.vfs import FileCache, MachineFS, TemplateFS


def make_template():
    return TemplateFS("base", {
        "/etc/passwd": b"root:x:0:0\n",
        "/etc/motd": b"hello\n",
        "/var/log/messages": b"boot\n",
    })


def test_writers_get_private_copies():
    template = make_template()
    cache = FileCache()
    machines = [MachineFS(template, cache) for _ in range(10)]
    baseline = template.tree_hash()

    for i, fs in enumerate(machines):
        fs.write("/etc/passwd", f"root:x:0:0\nuser{i}:x:{i}:{i}\n")

    for i, fs in enumerate(machines):
        assert fs.read("/etc/passwd").decode() == f"root:x:0:0\nuser{i}:x:{i}:{i}\n"
    assert template.tree_hash() == baseline
    assert template.read("/etc/passwd") == b"root:x:0:0\n"
    assert all(fs.private_entries() == 1 for fs in machines)


def test_unmodified_reads_share_the_cache():
    template = make_template()
    cache = FileCache()
    machines = [MachineFS(template, cache) for _ in range(10)]
    template.disk_reads = 0

    for _ in range(100):
        for fs in machines:
            fs.read("/etc/motd")
    assert template.disk_reads == 1


def test_cache_eviction_is_lru():
    template = TemplateFS("t", {f"/f{i}": b"x" * i for i in range(1, 5)})
    cache = FileCache(capacity=2)
    fs = MachineFS(template, cache)
    fs.read("/f1")
    fs.read("/f2")
    fs.read("/f1")  # refresh f1, so f2 is the eviction victim
    fs.read("/f3")
    reads_before = template.disk_reads
    fs.read("/f1")
    assert template.disk_reads == reads_before
    fs.read("/f2")
    assert template.disk_reads == reads_before + 1


def test_delete_masks_the_template_file():
    fs = MachineFS(make_template())
    fs.delete("/etc/motd")
    assert not fs.exists("/etc/motd")
    with pytest.raises(FileError):
        fs.read("/etc/motd")
    # Re-creating it works and reads back the new content.
    fs.write("/etc/motd", b"welcome\n")
    assert fs.read("/etc/motd") == b"welcome\n"


def test_delete_missing_file_is_an_error():
    fs = MachineFS(make_template())
    with pytest.raises(FileError):
        fs.delete("/no/such/file")


def test_list_dir_merges_overlay_and_template():
    fs = MachineFS(make_template())
    fs.write("/etc/hosts", b"127.0.0.1 localhost\n")
    fs.delete("/etc/motd")
    assert fs.list_dir("/etc") == ["hosts", "passwd"]
    assert fs.list_dir("/") == ["etc", "var"]


def test_list_dir_missing_directory():
    fs = MachineFS(make_template())
    with pytest.raises(FileError):
        fs.list_dir("/opt")


def test_overlay_state_round_trip():
    fs = MachineFS(make_template())
    fs.write("/tmp/loot", b"\x00\xff binary \xfe")
    fs.delete("/etc/motd")
    state = fs.state()

    restored = MachineFS(make_template())
    restored.load_state(state)
    assert restored.read("/tmp/loot") == b"\x00\xff binary \xfe"
    assert not restored.exists("/etc/motd")
    assert restored.state() == state


def test_template_from_dir(tmp_path):
    bundle = tmp_path / "demo"
    (bundle / "files" / "etc").mkdir(parents=True)
    (bundle / "template.json").write_text('{"id": "demo-fs"}')
    (bundle / "files" / "etc" / "issue").write_bytes(b"demo\n")
    template = TemplateFS.from_dir(bundle)
    assert template.id == "demo-fs"
    assert template.read("/etc/issue") == b"demo\n"


def test_tree_hash_tracks_content():
    a = TemplateFS("t", {"/a": b"1"})
    b = TemplateFS("t", {"/a": b"2"})
    assert a.tree_hash() != b.tree_hash()
    assert a.tree_hash() == TemplateFS("t", {"/a": b"1"}).tree_hash()


paths = st.sampled_from(["/a", "/b", "/dir/c", "/dir/sub/d"])


@given(st.lists(st.tuples(paths, st.binary(max_size=16)), max_size=40))
def test_read_your_writes(writes):
    fs = MachineFS(TemplateFS("t", {"/a": b"template"}))
    expected: dict[str, bytes] = {"/a": b"template"}
    for path, data in writes:
        fs.write(path, data)
        expected[path] = data
    for path, data in expected.items():
        assert fs.read(path) == data
