use crate::nn::{ChannelAffine, Conv2d, Layer, Linear, Padding, Residual, Sequential};
use crate::scalar::Scalar;

pub const ARCHITECTURES: [&str; 2] = ["tiny_cnn", "resnet50"];

fn conv<T: Scalar>(in_c: usize, out_c: usize, k: usize, stride: usize) -> Layer<T> {
    Layer::Conv(Conv2d::zeros(in_c, out_c, k, stride, k / 2, Padding::Zero))
}

fn affine<T: Scalar>(c: usize) -> Layer<T> {
    Layer::Affine(ChannelAffine { scale: vec![T::one(); c], shift: vec![T::zero(); c] })
}

fn linear<T: Scalar>(in_f: usize, out_f: usize) -> Layer<T> {
    Layer::Linear(Linear { in_f, out_f, weight: vec![T::zero(); in_f * out_f], bias: vec![T::zero(); out_f] })
}

/// Four strided 3×3 convolutions with one intermediate pooling step, global
/// average pooling and a single-logit head: about 7M multiply-adds at 224².
pub fn tiny_cnn<T: Scalar>() -> Sequential<T> {
    Sequential::new(vec![
        conv(3, 8, 3, 2),
        Layer::Relu,
        conv(8, 16, 3, 2),
        Layer::Relu,
        Layer::AvgPool { k: 2 },
        conv(16, 32, 3, 2),
        Layer::Relu,
        Layer::GlobalAvgPool,
        linear(32, 1),
    ])
}

fn bottleneck<T: Scalar>(in_c: usize, width: usize, stride: usize) -> Layer<T> {
    let out_c = width * 4;
    let main = Sequential::new(vec![
        conv(in_c, width, 1, 1),
        affine(width),
        Layer::Relu,
        conv(width, width, 3, stride),
        affine(width),
        Layer::Relu,
        conv(width, out_c, 1, 1),
        affine(out_c),
    ]);
    let shortcut = (stride != 1 || in_c != out_c).then(|| Sequential::new(vec![conv(in_c, out_c, 1, stride), affine(out_c)]));
    Layer::Residual(Box::new(Residual { main, shortcut }))
}

/// Bottleneck residual network with stage depths 3-4-6-3 and batch norm
/// folded into frozen per-channel affines; the classifier is replaced by a
/// single-logit linear head.
pub fn resnet50<T: Scalar>() -> Sequential<T> {
    let mut layers = vec![conv(3, 64, 7, 2), affine(64), Layer::Relu, Layer::MaxPool { k: 3, stride: 2, pad: 1 }];
    let mut in_c = 64;
    for (i, (width, blocks)) in [(64, 3), (128, 4), (256, 6), (512, 3)].into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 && i > 0 { 2 } else { 1 };
            layers.push(bottleneck(in_c, width, stride));
            in_c = width * 4;
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(linear(in_c, 1));
    Sequential::new(layers)
}
