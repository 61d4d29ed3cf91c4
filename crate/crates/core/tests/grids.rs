use mlcgan_autodiff::{no_grad, Tensor};
use mlcgan_core::data::{labels_tensor, ImageTensor, LabelVector, Vocabulary};
use mlcgan_core::evaluation::{independence_grid, interpolate_condition, render_cell, render_grid, z_from_seed};
use mlcgan_core::{Generator, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup() -> (Generator<f32>, Vocabulary) {
    let g = Generator::<f32>::new(&ModelConfig::tiny(8, 3), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let vocab = Vocabulary::new(["egg", "ham", "rice"].map(String::from).to_vec()).unwrap();
    (g, vocab)
}

fn lv(bits: &[u8]) -> LabelVector {
    LabelVector::from_bits(bits)
}

#[test]
fn single_cell_grid_matches_generate() {
    let (g, vocab) = setup();
    let spec = independence_grid(&vocab, &[lv(&[1, 0, 1])], &[42], g.z_dim(), 0.7);
    let (img, meta) = render_grid(&spec, &g).unwrap();
    let z = Tensor::from_vec(z_from_seed(42, g.z_dim()), &[1, g.z_dim()]);
    let direct = no_grad(|| g.generate(&labels_tensor(&[lv(&[1, 0, 1])]), &z, 0.7)).unwrap();
    assert_eq!(img, ImageTensor::from_tensor(&direct, 0).unwrap().to_rgb());
    assert_eq!(meta[0].ingredients.as_deref(), Some(&["egg".to_string(), "rice".to_string()][..]));
}

#[test]
fn grids_render_deterministically() {
    let (g, vocab) = setup();
    let spec = independence_grid(&vocab, &[lv(&[1, 0, 0]), lv(&[0, 1, 1])], &[1, 2, 3], g.z_dim(), 1.0);
    let (a, meta) = render_grid(&spec, &g).unwrap();
    let (b, _) = render_grid(&spec, &g).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.width(), a.height()), (16, 24));
    assert_eq!((meta[5].row, meta[5].col, meta[5].seed), (2, 1, Some(3)));
}

#[test]
fn interpolation_corners_are_the_endpoints() {
    let (g, _) = setup();
    let (la, lb) = (lv(&[1, 0, 0]), lv(&[0, 1, 1]));
    let te_a = g.embed(&labels_tensor(&[la.clone()])).unwrap();
    let te_b = g.embed(&labels_tensor(&[lb.clone()])).unwrap();
    let (za, zb) = (z_from_seed(5, g.z_dim()), z_from_seed(6, g.z_dim()));
    let spec = interpolate_condition(&te_a, &te_b, &za, &zb, 4, 1.0).unwrap();
    let endpoint = |l: &LabelVector, seed| {
        let z = Tensor::from_vec(z_from_seed(seed, g.z_dim()), &[1, g.z_dim()]);
        let t = no_grad(|| g.generate(&labels_tensor(std::slice::from_ref(l)), &z, 1.0)).unwrap();
        ImageTensor::from_tensor(&t, 0).unwrap()
    };
    let corners = [(0, 0, &la, 5), (0, 3, &la, 6), (3, 0, &lb, 5), (3, 3, &lb, 6)];
    for (r, c, l, seed) in corners {
        assert_eq!(render_cell(&g, spec.cell(r, c)).unwrap().data(), endpoint(l, seed).data(), "cell {r},{c}");
    }
    assert_eq!(spec.cell(1, 2).meta.label_alpha, Some(1.0 / 3.0));
    assert!(interpolate_condition(&te_a, &te_b, &za, &zb, 1, 1.0).is_err());
}
