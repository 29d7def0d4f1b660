//! Classifies the synthetic texture set with MR8 + Fisher vectors + a linear SVM.

use texbank::descriptors::{DescriptorKind, Extractor};
use texbank::encoders::{postprocess, Encoder, Orderless};
use texbank::learn::{recalibrate, train_linear_svm_ova, SvmParams};
use texbank::synth::{synth_dataset, SynthClass};
use texbank::vocab::{fit_gmm, GmmParams};
use texbank::{EncoderKind, Matrix, PostProcessSpec};

fn main() -> Result<(), texbank::Error> {
    let data = synth_dataset(10, 80, 0);
    let mr8 = DescriptorKind::mr8();
    let samples = data
        .iter()
        .map(|(img, _)| mr8.extract(img).map(|f| f.to_sample()))
        .collect::<Result<Vec<_>, _>>()?;

    // every 25th descriptor of every image feeds the vocabulary
    let mut pool = Vec::new();
    for s in &samples {
        for i in (0..s.len()).step_by(25) {
            pool.extend_from_slice(s.descriptor(i));
        }
    }
    let pool = Matrix::from_vec(pool.len() / 8, 8, pool)?;
    let gmm = fit_gmm(&pool, &GmmParams::new(16))?.model;

    let fv = Orderless::Fv(&gmm);
    let post = PostProcessSpec::default_for(EncoderKind::Fv);
    let rows = samples
        .iter()
        .map(|s| {
            fv.encode(s)
                .and_then(|v| postprocess(&v, &post))
                .map(|v| v.values)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let x = Matrix::from_rows(&rows)?;
    let y: Vec<usize> = data.iter().map(|d| d.1).collect();
    let names: Vec<String> = SynthClass::ALL
        .iter()
        .map(|c| c.name().to_string())
        .collect();

    let clf = train_linear_svm_ova(&x, &y, &names, &SvmParams::default())?;
    let clf = recalibrate(&clf, &x, &y)?;
    let correct = x
        .iter_rows()
        .zip(&y)
        .filter(|(r, &t)| clf.predict(r).map(|p| p == t).unwrap_or(false))
        .count();
    println!("training accuracy: {}/{}", correct, y.len());
    Ok(())
}
