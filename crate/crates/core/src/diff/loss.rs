use crate::error::Result;
use crate::image::Image;
use crate::metrics::{self, check_ssim_size, filter_valid_adjoint, gaussian_window, SsimStats, SSIM_C1, SSIM_C2};

/// `L1 + lambda1 * (1 - SSIM)`.
pub fn loss(render: &Image, gt: &Image, lambda1: f64) -> Result<f64> {
    let l1 = metrics::l1(render, gt)?;
    if lambda1 == 0.0 {
        return Ok(l1);
    }
    Ok(l1 + lambda1 * (1.0 - metrics::ssim(render, gt)?))
}

/// Loss value and its gradient with respect to every channel of `render`.
pub fn loss_and_grad(render: &Image, gt: &Image, lambda1: f64) -> Result<(f64, Image)> {
    render.check_same_shape(gt)?;
    let n = render.as_slice().len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = render
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(r, g)| {
            let d = r - g;
            l1 += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    let mut value = l1 / n;
    if lambda1 != 0.0 {
        let (s, ds) = ssim_and_grad(render, gt)?;
        value += lambda1 * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(ds.as_slice()) {
            *g -= lambda1 * d;
        }
    }
    Ok((value, Image::from_vec(render.width(), render.height(), grad)?))
}

/// Mean SSIM and its gradient with respect to the first argument.
pub fn ssim_and_grad(x_img: &Image, y_img: &Image) -> Result<(f64, Image)> {
    x_img.check_same_shape(y_img)?;
    check_ssim_size(x_img)?;
    let k = gaussian_window();
    let (w, h) = (x_img.width(), x_img.height());
    let mut grad = Image::new(w, h);
    let mut total = 0.0;
    let mut count = 0usize;
    let nv = (w + 1 - metrics::SSIM_WINDOW) * (h + 1 - metrics::SSIM_WINDOW);
    let scale = 1.0 / (3 * nv) as f64;
    for c in 0..3 {
        let x = x_img.channel(c);
        let y = y_img.channel(c);
        let st = SsimStats::compute(x.as_slice(), y.as_slice(), w, h, &k);
        let mut g_mu = vec![0.0; nv];
        let mut g_xx = vec![0.0; nv];
        let mut g_xy = vec![0.0; nv];
        for i in 0..nv {
            let (mx, my) = (st.mu_x[i], st.mu_y[i]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * st.cov_xy[i] + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = st.var_x[i] + st.var_y[i] + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            let d_mu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
            let d_var = -s / b2;
            let d_cov = 2.0 * a1 / (b1 * b2);
            // var_x = E[x²] - mu_x², cov = E[xy] - mu_x mu_y
            g_mu[i] = scale * (d_mu - 2.0 * mx * d_var - my * d_cov);
            g_xx[i] = scale * d_var;
            g_xy[i] = scale * d_cov;
        }
        count += nv;
        let b_mu = filter_valid_adjoint(&g_mu, w, h, &k);
        let b_xx = filter_valid_adjoint(&g_xx, w, h, &k);
        let b_xy = filter_valid_adjoint(&g_xy, w, h, &k);
        let (xs, ys) = (x.as_slice(), y.as_slice());
        let out = grad.as_mut_slice();
        for p in 0..w * h {
            out[p * 3 + c] = b_mu[p] + 2.0 * xs[p] * b_xx[p] + ys[p] * b_xy[p];
        }
    }
    Ok((total / count as f64, grad))
}
