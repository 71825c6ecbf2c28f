use std::collections::BTreeMap;

use bitfusion::arch::ArchConfig;
use bitfusion::array::Activation;
use bitfusion::codegen::network::{reference, CompileOptions, Network, Program};
use bitfusion::codegen::{
    fuse_descriptors, loop_count, lower, order_loops, CodegenError, LayerDescriptor, LayerKind, Schedule,
    Stationarity,
};
use bitfusion::isa::{ComputeOp, Instruction};
use bitfusion::sim::{run_network, RunReport, SimConfig};
use proptest::prelude::*;

fn run(p: &Program, arch: &ArchConfig) -> (RunReport, bitfusion::image::Memory) {
    let mut mem = p.memory.clone();
    let report = run_network(&p.blocks(), &mut mem, &SimConfig::from(arch), p.batch as u64).expect("simulates");
    (report, mem)
}

/// Simulates and checks every layer output against the reference.
fn check(net: &Network, arch: &ArchConfig, opts: &CompileOptions) -> RunReport {
    let p = net.compile(arch, opts).expect("compiles");
    let (report, mem) = run(&p, arch);
    let expect = reference(&p.unfused, &p.memory).expect("reference");
    for l in &p.layers {
        let name = &l.desc.tensors.output;
        assert_eq!(mem.read_tensor(name).unwrap(), expect[name], "tensor {name}");
    }
    report
}

fn net(text: &str) -> Network {
    Network::parse(text).expect("network parses")
}

const FC: &str = r#"
name = "fc"
[input]
shape = [1, 4]
bits = 8
seed = 3
[[layer]]
name = "fc"
kind = "fc"
out_features = 4
weight_bits = 2
out_bits = 8
shift = 2
"#;

#[test]
fn untiled_fc_matches_reference() {
    let opts = CompileOptions {
        schedule: Some(Schedule::untiled()),
        ..Default::default()
    };
    check(&net(FC), &ArchConfig::default(), &opts);
    check(&net(FC), &ArchConfig::default(), &CompileOptions::default());
}

const CONV: &str = r#"
[input]
shape = [1, 6, 6, 4]
bits = 4
seed = 9
[[layer]]
name = "c"
kind = "conv"
out_channels = 8
kernel = 3
weight_bits = 4
act = "relu"
shift = 3
out_bits = 4
"#;

#[test]
fn conv_loop_counts() {
    let arch = ArchConfig::default();
    let d = &net(CONV).descriptors(&CompileOptions::default()).unwrap()[0].0;
    let tiled = lower(d, &arch, &Schedule::tiled(Stationarity::Output)).unwrap();
    let untiled = lower(d, &arch, &Schedule::untiled()).unwrap();
    assert_eq!(loop_count(&tiled.block), 12);
    assert_eq!(loop_count(&untiled.block), 6);
    check(&net(CONV), &arch, &CompileOptions::default());
    check(
        &net(CONV),
        &arch,
        &CompileOptions {
            schedule: Some(Schedule::untiled()),
            ..Default::default()
        },
    );
}

#[test]
fn pool_lowers_to_max() {
    let text = format!("{CONV}\n[[layer]]\nkind = \"pool\"\nwindow = 2\n");
    let p = net(&text).compile(&ArchConfig::default(), &CompileOptions::default()).unwrap();
    assert_eq!(p.layers[1].block.compute_op(), Some(ComputeOp::Max));
    assert_eq!(p.layers[0].block.compute_op(), Some(ComputeOp::MulAdd));
    check(&net(&text), &ArchConfig::default(), &CompileOptions::default());
}

fn obuf_store_words(l: &bitfusion::codegen::Lowered) -> u64 {
    let cfg = SimConfig::from(&ArchConfig::default());
    let p = l.block.clone();
    let mut mem = bitfusion::image::Memory::new();
    for (name, shape) in [
        (&l.desc.tensors.input, l.desc.input_shape()),
        (&l.desc.tensors.weights, l.desc.weight_shape()),
        (&l.desc.tensors.output, l.desc.output_shape()),
    ] {
        mem.allocate(name, shape, 8, true).unwrap();
    }
    let mut l = l.clone();
    l.block = p;
    l.bind(&mem).unwrap();
    let r = run_network(&[l.block], &mut mem, &cfg, 1).unwrap();
    r.total.offchip.obuf.store_words
}

#[test]
fn tiling_cuts_output_stores_by_reduction_extent() {
    let arch = ArchConfig::default();
    let d = LayerDescriptor::fc("fc", 1, 8, 4, 8, 8);
    let tiled = lower(&d, &arch, &Schedule::tiled(Stationarity::Output)).unwrap();
    let untiled = lower(&d, &arch, &Schedule::untiled()).unwrap();
    let (t, u) = (obuf_store_words(&tiled), obuf_store_words(&untiled));
    assert_eq!(t, 4);
    assert_eq!(u, 8 * t);
}

fn small_caps_arch() -> ArchConfig {
    ArchConfig {
        ibuf_bits: 8 * 64,
        obuf_bits: 32 * 16,
        wbuf_bits: 8 * 64,
        ..ArchConfig::default()
    }
}

#[test]
fn output_stationary_moves_fewer_partial_sums() {
    let arch = small_caps_arch();
    let d = LayerDescriptor::fc("fc", 16, 64, 64, 8, 8);
    let os = lower(&d, &arch, &Schedule::tiled(Stationarity::Output).with_tile("ic", 16)).unwrap();
    assert_eq!(os.tile("ic"), Some(16));
    let is = order_loops(&os, Stationarity::Input).unwrap();
    let ws = order_loops(&os, Stationarity::Weight).unwrap();
    let o = |l: &bitfusion::codegen::Lowered| {
        let cfg = SimConfig::from(&arch);
        let mut mem = bitfusion::image::Memory::new();
        for (name, shape, bits) in [
            ("fc.in", l.desc.input_shape(), 8),
            ("fc.w", l.desc.weight_shape(), 8),
            ("fc.out", l.desc.output_shape(), 8),
        ] {
            mem.allocate(name, shape, bits, true).unwrap();
        }
        let mut l = l.clone();
        l.bind(&mem).unwrap();
        run_network(&[l.block], &mut mem, &cfg, 1).unwrap().total
    };
    let (co, ci, cw) = (o(&os), o(&is), o(&ws));
    let obuf = |c: &bitfusion::sim::Counters| c.offchip.obuf.load_words + c.offchip.obuf.store_words;
    assert!(obuf(&co) < obuf(&ci), "{} vs {}", obuf(&co), obuf(&ci));
    assert!(cw.offchip.wbuf.load_words <= co.offchip.wbuf.load_words);
    assert!(ci.offchip.ibuf.load_words <= co.offchip.ibuf.load_words);
}

#[test]
fn stationarity_does_not_change_results() {
    let text = format!("{CONV}\n[[layer]]\nkind = \"fc\"\nout_features = 10\nout_bits = 8\nshift = 4\n");
    let arch = ArchConfig {
        ibuf_bits: 4 * 80,
        obuf_bits: 32 * 40,
        wbuf_bits: 4 * 300,
        ..ArchConfig::default()
    };
    for st in Stationarity::ALL {
        check(
            &net(&text),
            &arch,
            &CompileOptions {
                schedule: Some(Schedule::tiled(st)),
                ..Default::default()
            },
        );
    }
}

#[test]
fn two_array_layers_do_not_fuse() {
    let a = LayerDescriptor::fc("a", 1, 4, 4, 8, 8);
    let mut b = LayerDescriptor::fc("b", 1, 4, 4, 8, 8);
    b.tensors.input = a.tensors.output.clone();
    assert!(matches!(fuse_descriptors(&a, &b), Err(CodegenError::NotFusible(_))));
}

#[test]
fn fused_activation_has_no_intermediate_traffic() {
    let text = r#"
[input]
shape = [2, 16]
bits = 8
[[layer]]
name = "fc"
kind = "fc"
out_features = 8
shift = 4
[[layer]]
name = "r"
kind = "activation"
"#;
    let arch = ArchConfig::default();
    let unfused = check(&net(text), &arch, &CompileOptions::default());
    assert!(unfused.total.tensor_bits("fc.out") > 0);
    let opts = CompileOptions {
        fuse: true,
        ..Default::default()
    };
    let p = net(text).compile(&arch, &opts).unwrap();
    assert_eq!(p.layers.len(), 1);
    let fused = check(&net(text), &arch, &opts);
    assert_eq!(fused.total.tensor_bits("fc.out"), 0);
    assert!(fused.total.offchip_bits() < unfused.total.offchip_bits());
}

#[test]
fn fused_conv_pool_matches_unfused() {
    let text = format!("{CONV}\n[[layer]]\nname = \"p\"\nkind = \"pool\"\nwindow = 2\nout_bits = 4\n");
    let arch = ArchConfig::default();
    let opts = CompileOptions {
        fuse: true,
        ..Default::default()
    };
    let p = net(&text).compile(&arch, &opts).unwrap();
    assert_eq!(p.layers.len(), 1);
    assert!(p.layers[0].desc.fused_pool.is_some());
    let (_, mem) = run(&p, &arch);
    let q = net(&text).compile(&arch, &CompileOptions::default()).unwrap();
    let (_, mem2) = run(&q, &arch);
    assert_eq!(mem.read_tensor("p.out").unwrap(), mem2.read_tensor("p.out").unwrap());
    check(&net(&text), &arch, &opts);
}

#[test]
fn blocks_stay_small() {
    let text = format!("{CONV}\n[[layer]]\nkind = \"pool\"\nwindow = 2\n[[layer]]\nkind = \"fc\"\nout_features = 10\n");
    let p = net(&text).compile(&ArchConfig::default(), &CompileOptions::default()).unwrap();
    for l in &p.layers {
        assert!(l.block.instructions.len() <= 100, "{}", l.block.instructions.len());
        assert!(matches!(l.block.instructions[0], Instruction::Setup(_)));
    }
}

#[test]
fn empty_network_has_no_blocks() {
    let p = net("[input]\nshape = [1, 4]\nbits = 8\n")
        .compile(&ArchConfig::default(), &CompileOptions::default())
        .unwrap();
    assert!(p.layers.is_empty());
    assert_eq!(p.output, "input");
}

#[test]
fn recurrent_layers_share_weights() {
    let text = r#"
[input]
shape = [2, 8]
bits = 4
[[layer]]
name = "rnn"
kind = "recurrent"
steps = 3
weight_bits = 4
act = "relu"
shift = 5
out_bits = 4
"#;
    let arch = ArchConfig::default();
    let p = net(text).compile(&arch, &CompileOptions::default()).unwrap();
    assert_eq!(p.layers.len(), 3);
    assert_eq!(p.memory.regions().iter().filter(|r| r.name.ends_with(".w")).count(), 1);
    check(&net(text), &arch, &CompileOptions::default());
    let d = &net(text).descriptors(&CompileOptions::default()).unwrap()[0].0;
    assert!(matches!(d.kind, LayerKind::RecurrentGemm { steps: 3, .. }));
}

#[test]
fn bad_networks_are_reported() {
    let arch = ArchConfig::default();
    let e = net("[input]\nshape = [1, 4]\nbits = 8\n[[layer]]\nkind = \"conv\"\nout_channels = 2\nkernel = 1\n")
        .compile(&arch, &CompileOptions::default())
        .unwrap_err();
    assert!(e.to_string().contains("height"), "{e}");
    assert!(Network::parse("[input]\nshape = [1]\nbits = 8\nbogus = 1\n").is_err());
    let e = net("[input]\nshape = [1, 4]\nbits = 3\n[[layer]]\nkind = \"fc\"\nout_features = 2\n")
        .compile(&arch, &CompileOptions::default())
        .unwrap_err();
    assert!(e.to_string().contains("l0"), "{e}");
}

fn traffic(ic: usize, oc: usize, arch: &ArchConfig) -> u64 {
    let d = LayerDescriptor::fc("fc", 4, ic, oc, 8, 8);
    let l = lower(&d, arch, &Schedule::tiled(Stationarity::Output)).unwrap();
    let mut mem = bitfusion::image::Memory::new();
    for (name, shape) in [("fc.in", d.input_shape()), ("fc.w", d.weight_shape()), ("fc.out", d.output_shape())] {
        mem.allocate(name, shape, 8, true).unwrap();
    }
    let mut l = l;
    l.bind(&mem).unwrap();
    run_network(&[l.block], &mut mem, &SimConfig::from(arch), 1)
        .unwrap()
        .total
        .offchip_bits()
}

#[test]
fn traffic_grows_with_layer_size() {
    let arch = small_caps_arch();
    let mut last = 0;
    for n in [8, 16, 32, 64] {
        let t = traffic(n, n, &arch);
        assert!(t > last, "{n}: {t} <= {last}");
        last = t;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedules_preserve_semantics(
        b in 1usize..3,
        ic in prop::sample::select(vec![2usize, 4, 6, 12]),
        oc in 1usize..7,
        ibits in prop::sample::select(vec![2u32, 4, 8, 16]),
        wbits in prop::sample::select(vec![2u32, 4, 8]),
        st in prop::sample::select(Stationarity::ALL.to_vec()),
        tiled in any::<bool>(),
        cap in 1u64..6,
        seed in any::<u64>(),
    ) {
        let text = format!(
            "[input]\nshape = [{b}, {ic}]\nbits = {ibits}\nseed = {seed}\n[[layer]]\nkind = \"fc\"\nout_features = {oc}\nweight_bits = {wbits}\nshift = 3\nact = \"relu\"\n"
        );
        let arch = ArchConfig {
            ibuf_bits: 16 * cap,
            obuf_bits: 32 * cap,
            wbuf_bits: 8 * cap,
            ..ArchConfig::default()
        };
        let sched = if tiled { Schedule::tiled(st) } else { Schedule::untiled() };
        check(&net(&text), &arch, &CompileOptions { schedule: Some(sched), ..Default::default() });
    }

    #[test]
    fn conv_schedules_preserve_semantics(
        hw in 3usize..6,
        c in 1usize..4,
        oc in 1usize..4,
        k in 1usize..3,
        stride in 1usize..3,
        st in prop::sample::select(Stationarity::ALL.to_vec()),
        seed in any::<u64>(),
    ) {
        let text = format!(
            "[input]\nshape = [1, {hw}, {hw}, {c}]\nbits = 4\nseed = {seed}\n[[layer]]\nkind = \"conv\"\nout_channels = {oc}\nkernel = {k}\nstride = {stride}\nweight_bits = 4\nshift = 2\nout_bits = 8\n"
        );
        let arch = ArchConfig { ibuf_bits: 4 * 12, obuf_bits: 32 * 4, wbuf_bits: 4 * 8, ..ArchConfig::default() };
        check(&net(&text), &arch, &CompileOptions { schedule: Some(Schedule::tiled(st)), ..Default::default() });
    }
}

#[test]
fn network_round_trips_through_toml() {
    let n = net(CONV);
    assert_eq!(Network::parse(&n.to_toml()).unwrap(), n);
    let _: BTreeMap<String, u32> = n.layers[0].tiles.clone();
    assert_eq!(n.layers[0].act, Some(Activation::Relu));
}
