use bitfusion::arch::ArchConfig;
use bitfusion::codegen::{lower, LayerDescriptor, Schedule, Stationarity};
use bitfusion::codegen::network::random_tensor;
use bitfusion::image::Memory;
use bitfusion::isa::assemble;
use bitfusion::refmodel::{act_ref, gemm_ref, requant_ref, Tensor};
use bitfusion::sim::{run_block, run_network, MachineState, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FC with 4 inputs and 4 outputs at 8x8 bits on a 2x2 array, traced by hand.
#[test]
fn golden_fc_trace() {
    let arch = ArchConfig {
        rows: 2,
        cols: 2,
        ..ArchConfig::default()
    };
    let d = LayerDescriptor::fc("fc", 1, 4, 4, 8, 8);
    let mut l = lower(&d, &arch, &Schedule::tiled(Stationarity::Output)).unwrap();
    let mut mem = Memory::new();
    mem.allocate("fc.in", vec![1, 4], 8, true).unwrap();
    mem.allocate("fc.w", vec![4, 4], 8, true).unwrap();
    mem.allocate("fc.out", vec![1, 4], 32, true).unwrap();
    let x = Tensor::new(vec![1, 4], 8, true, vec![1, -2, 3, 4]).unwrap();
    #[rustfmt::skip]
    let w = Tensor::new(vec![4, 4], 8, true, vec![
        1, 2, 3, 4,
        0, -1, 5, -6,
        7, 0, -2, 1,
        -3, 2, 1, 0,
    ]).unwrap();
    mem.write_tensor("fc.in", &x).unwrap();
    mem.write_tensor("fc.w", &w).unwrap();
    l.bind(&mem).unwrap();

    let c = run_block(&l.block, &mut MachineState::new(), &mut mem, &SimConfig::from(&arch)).unwrap();
    assert_eq!(mem.read_tensor("fc.out").unwrap().data, vec![10, 12, -9, 19]);

    // setup, 8 gen-addr, 6 loops, 2 loads, 3 reads, compute, write, store, end
    assert_eq!(c.instructions, 24);
    // 2 column tiles x 2 reduction tiles, then 2 + 2 - 1 fill cycles
    assert_eq!(c.compute_cycles, 7);
    assert_eq!(c.fill_cycles, 3);
    // loads end at 1 and 2, compute 2..9, store 9..10
    assert_eq!(c.cycles, 24 + 10);
    assert_eq!(c.total_multiplies(), 16);
    assert_eq!(c.multiplies["8x8"], 16);
    assert_eq!(c.brick_ops, 16 * 16);
    assert_eq!(c.shift_add_ops, 16 * 2);
    // each row keeps both of its inputs in one 32-bit row, each unit its 4 weights
    assert_eq!(c.buffers.ibuf.array_reads, 2);
    assert_eq!(c.buffers.wbuf.array_reads, 4);
    assert_eq!(c.buffers.ibuf.array_writes, 1);
    assert_eq!(c.buffers.wbuf.array_writes, 4);
    assert_eq!(c.buffers.obuf.array_writes, 4);
    assert_eq!(c.buffers.obuf.array_reads, 4);
    assert_eq!(c.offchip.ibuf.load_bits, 32);
    assert_eq!(c.offchip.wbuf.load_bits, 128);
    assert_eq!(c.offchip.obuf.store_bits, 128);
    assert_eq!(c.offchip.obuf.load_bits, 0);
    assert_eq!(c.tensor_bits("fc.w"), 128);
}

/// A hand-written tiled FC block: the reduction is split in two, so the
/// first pass stores partial sums and the second reloads them.
#[test]
fn tiled_fc_assembly_fixture() {
    let text = include_str!("fixtures/tiled_fc.bfasm");
    let blocks = assemble(text).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&mut rng, vec![2, 8], 8, true);
    let w = random_tensor(&mut rng, vec![8, 8], 4, true);
    let mut mem = Memory::new();
    assert_eq!(mem.allocate("x", vec![2, 8], 8, true).unwrap(), 0);
    assert_eq!(mem.allocate("w", vec![8, 8], 4, true).unwrap(), 16);
    assert_eq!(mem.allocate("y", vec![2, 8], 8, true).unwrap(), 80);
    mem.write_tensor("x", &x).unwrap();
    mem.write_tensor("w", &w).unwrap();
    let r = run_network(&blocks, &mut mem, &SimConfig::default(), 2).unwrap();
    let expect = requant_ref(&act_ref(&gemm_ref(&x, &w).unwrap()), 1, 8, true);
    assert_eq!(mem.read_tensor("y").unwrap(), expect);
    let o = r.total.offchip.obuf;
    // partial store, partial reload, final store
    assert_eq!(o.store_words, 32);
    assert_eq!(o.load_words, 16);
    assert_eq!(o.store_bits, 16 * 32 + 16 * 8);
    assert_eq!(r.total.regions, 2);
}

#[test]
fn three_loop_tiled_fc_fixture() {
    let blocks = assemble(include_str!("fixtures/fc_3loop.bfasm")).unwrap();
    assert_eq!(blocks.len(), 1);
    assert_eq!(blocks[0].loops().len(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, vec![2, 8], 8, true);
    let w = random_tensor(&mut rng, vec![8, 4], 8, true);
    let mut mem = Memory::new();
    mem.allocate("x", vec![2, 8], 8, true).unwrap();
    mem.allocate("w", vec![8, 4], 8, true).unwrap();
    mem.allocate("y", vec![2, 4], 32, true).unwrap();
    mem.write_tensor("x", &x).unwrap();
    mem.write_tensor("w", &w).unwrap();
    let r = run_network(&blocks, &mut mem, &SimConfig::default(), 2).unwrap();
    assert_eq!(mem.read_tensor("y").unwrap(), gemm_ref(&x, &w).unwrap());
    let t = r.total.offchip;
    assert_eq!((t.wbuf.load_words, t.ibuf.load_words, t.obuf.store_words, t.obuf.load_words), (32, 16, 8, 0));
    assert_eq!(r.total.regions, 2);
}
