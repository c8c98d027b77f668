/// Step-decay learning rate: `lr_init * decay^floor(iter / every)`.
pub fn lr_at(iter: usize, lr_init: f64, decay: f64, every: usize) -> f64 {
    let steps = (iter / every.max(1)) as i32;
    lr_init * decay.powi(steps)
}
