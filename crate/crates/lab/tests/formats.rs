use std::fs;

use valley_core::data::{blobs, BlobsConfig};
use valley_core::nn::{train, Architecture, BnInit, Model, TrainConfig};
use valley_core::stats::Histogram;
use valley_lab::checkpoint;
use valley_lab::manifest::{sha256_hex, Manifest, OutputDir};
use valley_lab::plot::{pgm_grid, render_svg, LinePlot, Series};
use valley_lab::tables::{self, Table};

fn trained_model() -> (Model, valley_core::data::Dataset) {
    let data = blobs(&BlobsConfig { samples: 120, dim: 6, ..Default::default() }).unwrap();
    let arch = Architecture::mlp(6, &[12], 3, Some(BnInit::Uniform01));
    let mut m = Model::new(arch, 5).unwrap();
    train(&mut m, &data, &TrainConfig { epochs: 2, batch_size: 16, ..Default::default() }).unwrap();
    (m, data)
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (m, data) = trained_model();
    let text = checkpoint::to_string(&m).unwrap();
    let back = checkpoint::from_str(&text).unwrap();
    assert_eq!(checkpoint::to_string(&back).unwrap(), text);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(back.params().values()), bits(m.params().values()));
    assert_eq!(bits(back.init_snapshot().values()), bits(m.init_snapshot().values()));
    assert_eq!(back.bn_state(), m.bn_state());
    assert_eq!(back.seed(), m.seed());
    assert_eq!(back.fingerprint(), m.fingerprint());
    let (ea, eb) = (back.evaluate(&data).unwrap(), m.evaluate(&data).unwrap());
    assert_eq!((ea.error.to_bits(), ea.ce.to_bits()), (eb.error.to_bits(), eb.ce.to_bits()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&m, &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), text);
    assert_eq!(checkpoint::load(&path).unwrap().fingerprint(), m.fingerprint());
}

#[test]
fn checkpoint_rejects_bad_input() {
    let (m, _) = trained_model();
    let text = checkpoint::to_string(&m).unwrap();
    assert!(checkpoint::from_str(&text.replace("valley-checkpoint", "other")).is_err());
    assert!(checkpoint::from_str(&text.replacen("\"version\": 1", "\"version\": 9", 1)).is_err());
    assert!(checkpoint::from_str(&text.replacen('{', "{\"extra\": 1,", 1)).is_err());
    assert!(checkpoint::from_str("not json").is_err());
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["params"].as_array_mut().unwrap().pop();
    assert!(checkpoint::from_str(&v.to_string()).is_err());

    let mut bad = m.clone();
    bad.params_mut()[0] = f64::NAN;
    assert!(checkpoint::to_string(&bad).is_err());
}

fn three_curves() -> LinePlot {
    let xs: Vec<f64> = (0..11).map(|i| -1.0 + 0.2 * i as f64).collect();
    LinePlot {
        title: "a < b & c".into(),
        x_label: "lambda".into(),
        y_label: "error".into(),
        series: vec![
            Series::new("g01", xs.iter().map(|&x| (x, x * x)).collect()),
            Series::new("sign", xs.iter().map(|&x| (x, x.max(0.0))).collect()),
            Series::new("ones", xs.iter().map(|&x| (x, if x == 0.0 { f64::NAN } else { 0.5 })).collect()),
        ],
    }
}

#[test]
fn svg_structure() {
    let svg = render_svg(&three_curves()).unwrap();
    assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches("class=\"legend-entry\"").count(), 3);
    assert_eq!(svg.matches("<g class=\"legend\">").count(), 1);
    for label in ["g01", "sign", "ones"] {
        assert!(svg.contains(&format!(">{label}</text>")));
    }
    assert!(svg.contains("a &lt; b &amp; c"));
    assert!(!svg.contains("NaN"));
    // the NaN point of the third series is dropped
    let third = svg.lines().filter(|l| l.starts_with("<polyline")).nth(2).unwrap();
    let pts = third.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
    assert_eq!(pts.split(' ').count(), 10);
}

#[test]
fn svg_is_deterministic_and_rejects_empty() {
    assert_eq!(render_svg(&three_curves()).unwrap(), render_svg(&three_curves()).unwrap());
    assert!(render_svg(&LinePlot::default()).is_err());
    let empty = LinePlot { series: vec![Series::new("x", vec![])], ..Default::default() };
    assert!(render_svg(&empty).is_err());
    let nan = LinePlot { series: vec![Series::new("x", vec![(f64::NAN, 1.0)])], ..Default::default() };
    assert!(render_svg(&nan).is_err());
}

#[test]
fn svg_constant_series_stays_in_frame() {
    let plot = LinePlot { series: vec![Series::new("flat", vec![(0.0, 2.0), (1.0, 2.0)])], ..Default::default() };
    let svg = render_svg(&plot).unwrap();
    let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
    for pair in line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>").split(' ') {
        let (x, y): (f64, f64) = {
            let (a, b) = pair.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        };
        assert!((0.0..=640.0).contains(&x) && (0.0..=420.0).contains(&y));
    }
}

#[test]
fn pgm_layout() {
    let tiles = vec![vec![vec![0.0, 1.0, 2.0, 3.0], vec![3.0; 4]], vec![vec![1.5; 4], vec![0.0; 4]]];
    let img = pgm_grid(&tiles, 2, 2).unwrap();
    let header = b"P5\n5 5\n255\n";
    assert_eq!(&img[..header.len()], header);
    let px = &img[header.len()..];
    assert_eq!(px.len(), 25);
    assert_eq!(&px[0..5], &[0, 85, 255, 255, 255]);
    assert_eq!(&px[5..10], &[170, 255, 255, 255, 255]);
    assert!(px[10..15].iter().all(|&p| p == 255));
    assert_eq!(&px[15..20], &[128, 128, 255, 0, 0]);

    assert!(pgm_grid(&[], 2, 2).is_err());
    assert!(pgm_grid(&[vec![vec![0.0; 3]]], 2, 2).is_err());
}

#[test]
fn csv_headers_are_fixed() {
    let headers: &[(&[&str], &str)] = &[
        (tables::SCAN_HEADER, "lambda,error,ce"),
        (tables::SOUP_HEADER, "epoch,ssr_ia,ssr_ib,ssr_ab,gap"),
        (tables::SOUP_CURVES_HEADER, "epoch,lambda,error,ce"),
        (tables::SOFTMAX_HEADER, "lambda,error,ce,tr_p,tr_h,first_order,second_order"),
        (tables::CONFUSION_HEADER, "lambda,aa,ai,ia,ii,diag_sum"),
        (tables::ROUNDS_HEADER, "round,acc,mean_ssr,selected_clients"),
        (tables::COMPARE_HEADER, "method,alpha,gamma,prox_mu,seeds,mean_acc,std_acc,accs"),
        (tables::COMPARE_SSR_HEADER, "method,alpha,round,mean_ssr"),
        (tables::TRAIN_HEADER, "epoch,lr,loss,error"),
        (tables::RELU_SUMMARY_HEADER, "lambda,mean,std"),
        (tables::HIST_HEADER, "bin_lo,bin_hi,count"),
    ];
    for (h, want) in headers {
        assert_eq!(Table::new(h).to_csv(), format!("{want}\n"));
    }
}

#[test]
fn histogram_table_golden() {
    let h = Histogram::new(&[0.1, 0.2, 0.6, 0.99, 1.0], 4, 0.0, 1.0);
    let csv = tables::histogram(&h).to_csv();
    assert_eq!(csv, "bin_lo,bin_hi,count\n0,0.25,2\n0.25,0.5,0\n0.5,0.75,1\n0.75,1,2\n");
}

#[test]
fn table_parse_round_trip() {
    let mut t = Table::new(&["a", "b"]);
    t.push(vec!["0.1".into(), "x;y".into()]);
    t.push(vec!["-2e-7".into(), "z".into()]);
    let back = Table::parse(&t.to_csv()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.column("a").unwrap(), vec![0.1, -2e-7]);
    assert!(back.column("b").is_err());
    assert!(back.column("c").is_err());
}

#[test]
fn manifest_hashes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "hello").unwrap();
    let out = dir.path().join("run");
    let mut od = OutputDir::create(&out).unwrap();
    od.write("b.csv", "x\n1\n").unwrap();
    od.write("a.txt", "abc").unwrap();
    od.input(&input).unwrap();
    #[derive(serde::Serialize)]
    struct Cfg {
        k: usize,
        name: String,
    }
    let m = od.finish("demo", &Cfg { k: 3, name: "n".into() }).unwrap();
    assert_eq!(m.tool, "valley");
    assert_eq!(m.command, "demo");
    let names: Vec<_> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
    assert_eq!(names, ["a.txt", "b.csv", "config.toml"]);
    assert_eq!(m.artifacts[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    assert_eq!(m.inputs[0].sha256, sha256_hex(b"hello"));
    for a in &m.artifacts {
        let bytes = fs::read(out.join(&a.path)).unwrap();
        assert_eq!(a.sha256, sha256_hex(&bytes));
        assert_eq!(a.bytes, bytes.len() as u64);
    }
    assert_eq!(fs::read_to_string(out.join("config.toml")).unwrap(), "k = 3\nname = \"n\"\n");
    let on_disk: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
}
