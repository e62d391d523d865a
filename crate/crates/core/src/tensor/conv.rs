//! 2D cross-correlation with zero padding (no kernel flip).

use super::{Element, Tensor};

/// Output positions `o` for which `o*stride + k_off - pad` lands inside
/// `[0, in_extent)`, as a half-open range clipped to `[0, out_extent)`.
fn valid_out_range(
    k_off: usize,
    pad: usize,
    in_extent: usize,
    stride: usize,
    out_extent: usize,
) -> (usize, usize) {
    let start = if k_off >= pad { 0 } else { (pad - k_off + stride - 1) / stride };
    if in_extent + pad <= k_off {
        return (start, start);
    }
    let last = (in_extent - 1 + pad - k_off) / stride;
    (start.min(out_extent), (last + 1).min(out_extent))
}

impl<T: Element> Tensor<T> {
    /// `self`: (Cin, H, W), `weight`: (Cout, Cin, kh, kw), `bias`: (Cout).
    /// Output: (Cout, H', W') with H' = (H + 2*pad_h - kh) / stride_h + 1.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Tensor<T> {
        let xs = self.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 3, "conv2d input must be (Cin, H, W), got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be (Cout, Cin, kh, kw), got {ws:?}");
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(cin, wcin, "conv2d channel mismatch: input {cin}, weight {wcin}");
        let (sh, sw) = stride;
        let (ph, pw) = pad;
        assert!(sh >= 1 && sw >= 1, "conv2d stride must be positive");
        assert!(
            kh <= h + 2 * ph && kw <= w + 2 * pw,
            "conv2d kernel ({kh}x{kw}) larger than padded input ({}x{})",
            h + 2 * ph,
            w + 2 * pw
        );
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[cout], "conv2d bias shape mismatch");
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;

        let xv = self.values();
        let wv = weight.values();
        let mut out = vec![T::zero(); cout * oh * ow];
        if let Some(b) = bias {
            let bv = b.to_vec();
            for co in 0..cout {
                out[co * oh * ow..(co + 1) * oh * ow].fill(bv[co]);
            }
        }
        for co in 0..cout {
            for ci in 0..cin {
                for ky in 0..kh {
                    let (oy0, oy1) = valid_out_range(ky, ph, h, sh, oh);
                    for kx in 0..kw {
                        let wval = wv[((co * cin + ci) * kh + ky) * kw + kx];
                        if wval == T::zero() {
                            continue;
                        }
                        let (ox0, ox1) = valid_out_range(kx, pw, w, sw, ow);
                        if ox1 <= ox0 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let xrow = &xv[ci * h * w + iy * w..][..w];
                            let orow = &mut out[(co * oh + oy) * ow..][..ow];
                            if sw == 1 {
                                let x0 = ox0 + kx - pw;
                                for (o, xe) in
                                    orow[ox0..ox1].iter_mut().zip(&xrow[x0..x0 + ox1 - ox0])
                                {
                                    *o = *o + wval * *xe;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    orow[ox] = orow[ox] + wval * xrow[ox * sw + kx - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
        drop(xv);
        drop(wv);

        let x = self.clone();
        let wt = weight.clone();
        let bt = bias.cloned();
        let mut parents = vec![x.clone(), wt.clone()];
        if let Some(b) = &bt {
            parents.push(b.clone());
        }
        Tensor::from_op("conv2d", vec![cout, oh, ow], out, parents, move |g| {
            let xv = x.values();
            let wv = wt.values();
            x.with_grad_mut(|dx| {
                for co in 0..cout {
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let (oy0, oy1) = valid_out_range(ky, ph, h, sh, oh);
                            for kx in 0..kw {
                                let wval = wv[((co * cin + ci) * kh + ky) * kw + kx];
                                if wval == T::zero() {
                                    continue;
                                }
                                let (ox0, ox1) = valid_out_range(kx, pw, w, sw, ow);
                                if ox1 <= ox0 {
                                    continue;
                                }
                                for oy in oy0..oy1 {
                                    let iy = oy * sh + ky - ph;
                                    let grow = &g[(co * oh + oy) * ow..][..ow];
                                    let xrow = &mut dx[ci * h * w + iy * w..][..w];
                                    if sw == 1 {
                                        let x0 = ox0 + kx - pw;
                                        for (xe, ge) in xrow[x0..x0 + ox1 - ox0]
                                            .iter_mut()
                                            .zip(&grow[ox0..ox1])
                                        {
                                            *xe = *xe + wval * *ge;
                                        }
                                    } else {
                                        for ox in ox0..ox1 {
                                            let xi = ox * sw + kx - pw;
                                            xrow[xi] = xrow[xi] + wval * grow[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
            wt.with_grad_mut(|dw| {
                for co in 0..cout {
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let (oy0, oy1) = valid_out_range(ky, ph, h, sh, oh);
                            for kx in 0..kw {
                                let (ox0, ox1) = valid_out_range(kx, pw, w, sw, ow);
                                if ox1 <= ox0 {
                                    continue;
                                }
                                let mut acc = T::zero();
                                for oy in oy0..oy1 {
                                    let iy = oy * sh + ky - ph;
                                    let grow = &g[(co * oh + oy) * ow..][..ow];
                                    let xrow = &xv[ci * h * w + iy * w..][..w];
                                    if sw == 1 {
                                        let x0 = ox0 + kx - pw;
                                        for (xe, ge) in
                                            xrow[x0..x0 + ox1 - ox0].iter().zip(&grow[ox0..ox1])
                                        {
                                            acc = acc + *xe * *ge;
                                        }
                                    } else {
                                        for ox in ox0..ox1 {
                                            acc = acc + xrow[ox * sw + kx - pw] * grow[ox];
                                        }
                                    }
                                }
                                let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                dw[wi] = dw[wi] + acc;
                            }
                        }
                    }
                }
            });
            if let Some(b) = &bt {
                b.with_grad_mut(|db| {
                    for co in 0..cout {
                        let mut acc = T::zero();
                        for k in 0..oh * ow {
                            acc = acc + g[co * oh * ow + k];
                        }
                        db[co] = db[co] + acc;
                    }
                });
            }
        })
    }
}
