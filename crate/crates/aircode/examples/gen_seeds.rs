use aircode::io::{checkpoint_to_bytes, keypoints_to_bytes, store_to_bytes, RunConfig};
use aircode::matcher::DescriptorRecord;
use aircode::model::{HeadKind, ModelDims, ModelParams, ObjectDescriptor};
use aircode::synth::{generate_object, SynthConfig};
use std::fs;
use std::path::Path;

fn put(dir: &str, name: &str, bytes: &[u8]) {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let d = root.join(dir);
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join(name), bytes).unwrap();
    println!("{dir}/{name}: {} bytes", bytes.len());
}

fn main() {
    let synth = SynthConfig {
        descriptor_width: 6,
        min_keypoints: 4,
        max_keypoints: 6,
        ..SynthConfig::default()
    };
    let objects: Vec<_> = (0..3).map(|i| generate_object(&synth, 50 + i).unwrap()).collect();

    put("keypoints_jsonl", "ok_small", &keypoints_to_bytes(6, &objects).unwrap());
    put("keypoints_jsonl", "ok_header_only", &keypoints_to_bytes(6, &[]).unwrap());
    put("keypoints_jsonl", "err_missing_header", b"{\"object_id\":\"a\"}\n");

    let unit = |i: usize, w: usize| {
        let mut v = vec![0.0; w];
        v[i % w] = 1.0;
        ObjectDescriptor::new(v).unwrap()
    };
    let records: Vec<DescriptorRecord> = (0..3)
        .map(|i| DescriptorRecord {
            object_id: format!("obj_{i}"),
            frame_id: i as i64,
            descriptor: unit(i, 8),
        })
        .collect();
    let store = store_to_bytes(8, &records).unwrap();
    put("descriptor_store", "ok_store", &store);
    put("descriptor_store", "ok_empty", &store_to_bytes(8, &[]).unwrap());
    put("descriptor_store", "err_truncated", &store[..store.len() - 5]);

    let dims = ModelDims {
        n_p: 3,
        n_m: 4,
        n_o: 6,
        attention_layers: 1,
        branch_hidden: 5,
        pos_hidden: 2,
    };
    put(
        "checkpoint",
        "ok_sparse",
        &checkpoint_to_bytes(&ModelParams::init(dims, HeadKind::Sparse, 1).unwrap()),
    );
    put(
        "checkpoint",
        "ok_dense",
        &checkpoint_to_bytes(&ModelParams::init(dims, HeadKind::Dense, 2).unwrap()),
    );
    let mut bad = checkpoint_to_bytes(&ModelParams::init(dims, HeadKind::Sparse, 3).unwrap());
    bad[..4].copy_from_slice(b"NOPE");
    put("checkpoint", "err_bad_magic", &bad);

    put(
        "run_config",
        "ok_default",
        RunConfig::default().to_toml_string().as_bytes(),
    );
    put(
        "run_config",
        "ok_partial",
        b"[train]\nsteps = 10\nseed = 7\n\n[eval]\ngaps = [1, 2]\n",
    );
    put("run_config", "err_unknown_key", b"[train]\nstepz = 10\n");
}
