use super::trace::EnergyTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stop {
    /// The requested duration elapsed.
    Elapsed,
    /// Stored energy fell to the low level.
    Low,
    /// Stored energy rose to the high level.
    High,
    /// No further event can ever occur.
    Stalled,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Evolution {
    pub t: f64,
    pub energy: f64,
    /// Raw harvested energy, before conversion efficiency.
    pub harvested: f64,
    pub consumed: f64,
    pub spilled: f64,
    pub stop: Stop,
}

pub(crate) struct Request {
    pub efficiency: f64,
    /// Constant draw while the interval runs, in watts.
    pub draw: f64,
    pub ceiling: f64,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub duration: f64,
}

/// Smallest `τ ∈ (0, limit]` solving `c0 + q0·τ + ½·q1·τ² = level`, where
/// the crossing moves in direction `rising`.
fn crossing(c0: f64, q0: f64, q1: f64, level: f64, rising: bool, limit: f64) -> Option<f64> {
    let d = c0 - level;
    let (a, b, c) = (0.5 * q1, q0, d);
    let mut roots = Vec::with_capacity(2);
    if a.abs() < 1e-300 || (a * limit).abs() < 1e-15 * b.abs().max(1e-300) {
        if b != 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum() * sq);
        if q != 0.0 {
            roots.push(c / q);
            roots.push(q / a);
        } else {
            roots.push(0.0);
        }
    }
    roots
        .into_iter()
        .filter(|&r| r > 0.0 && r <= limit)
        .filter(|&r| {
            let slope = q0 + q1 * r;
            if rising {
                slope >= 0.0
            } else {
                slope <= 0.0
            }
        })
        .fold(None, |best: Option<f64>, r| Some(best.map_or(r, |b| b.min(r))))
}

/// Integrates stored energy from time `t` under `req`, clamping at the
/// ceiling, until the duration elapses or a threshold is crossed.
pub(crate) fn evolve(trace: &EnergyTrace, t: f64, energy: f64, req: &Request) -> Evolution {
    let mut out = Evolution {
        t,
        energy: energy.min(req.ceiling),
        harvested: 0.0,
        consumed: 0.0,
        spilled: 0.0,
        stop: Stop::Elapsed,
    };
    if let Some(h) = req.high {
        if out.energy >= h {
            out.stop = Stop::High;
            return out;
        }
    }
    if let Some(l) = req.low {
        if out.energy <= l {
            out.stop = Stop::Low;
            return out;
        }
    }
    let end = t + req.duration;
    let eta = req.efficiency;
    let mut released = false;
    loop {
        let remaining = end - out.t;
        if remaining <= 0.0 {
            out.stop = Stop::Elapsed;
            return out;
        }
        let seg = trace.segment(out.t);
        let limit = seg.len.min(remaining);
        let q0 = eta * seg.start - req.draw;
        let q1 = eta * seg.slope;
        let advance = |out: &mut Evolution, tau: f64, e: f64| {
            out.harvested += seg.start * tau + 0.5 * seg.slope * tau * tau;
            out.consumed += req.draw * tau;
            let next = out.t + tau;
            out.t = if next > out.t || tau == 0.0 { next } else { out.t.next_up() };
            out.energy = e;
        };
        let clamped = !std::mem::take(&mut released)
            && out.energy >= req.ceiling && (q0 > 0.0 || (q0 == 0.0 && q1 >= 0.0));
        if clamped {
            if req.high.is_some_and(|h| h >= req.ceiling) {
                out.stop = Stop::High;
                return out;
            }
            let tau = if q1 < 0.0 { (-q0 / q1).min(limit) } else { limit };
            if tau.is_infinite() {
                out.stop = Stop::Stalled;
                return out;
            }
            let spill = q0 * tau + 0.5 * q1 * tau * tau;
            out.spilled += spill;
            advance(&mut out, tau, req.ceiling);
            released = tau < limit;
            continue;
        }
        let mut best: Option<(f64, Stop, f64)> = None;
        let mut consider = |level: f64, rising: bool, stop: Stop| {
            if let Some(tau) = crossing(out.energy, q0, q1, level, rising, limit) {
                if best.is_none_or(|(b, _, _)| tau < b) {
                    best = Some((tau, stop, level));
                }
            }
        };
        if let Some(h) = req.high {
            consider(h.min(req.ceiling), true, Stop::High);
        }
        if let Some(l) = req.low {
            consider(l, false, Stop::Low);
        }
        if req.high.is_none_or(|h| h < req.ceiling) {
            consider(req.ceiling, true, Stop::Elapsed);
        }
        match best {
            Some((tau, stop, level)) => {
                advance(&mut out, tau, level);
                if stop != Stop::Elapsed {
                    out.stop = stop;
                    return out;
                }
            }
            None => {
                if limit.is_infinite() {
                    out.stop = Stop::Stalled;
                    return out;
                }
                let e = out.energy + q0 * limit + 0.5 * q1 * limit * limit;
                advance(&mut out, limit, e.clamp(0.0, req.ceiling));
            }
        }
    }
}
