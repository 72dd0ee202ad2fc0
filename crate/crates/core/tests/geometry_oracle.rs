mod common;

use common::{bx, random_box, uniform};
use tilefuse::geometry::{area, eiou, enclosing, iou, remap_to_global, TileWindow};
use tilefuse::rng::SplitMix64;

/// IoU estimated by counting jittered grid samples over the enclosing box.
fn sampled_iou(a: &tilefuse::BBox, b: &tilefuse::BBox, rng: &mut SplitMix64) -> f64 {
    const N: usize = 96;
    let e = enclosing(a, b);
    let (dx, dy) = (e.width() / N as f64, e.height() / N as f64);
    let inside = |r: &tilefuse::BBox, x: f64, y: f64| x >= r.xmin() && x < r.xmax() && y >= r.ymin() && y < r.ymax();
    let (mut inter, mut union) = (0u32, 0u32);
    for j in 0..N {
        for i in 0..N {
            let x = e.xmin() + (i as f64 + rng.next_f64()) * dx;
            let y = e.ymin() + (j as f64 + rng.next_f64()) * dy;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += u32::from(ia && ib);
            union += u32::from(ia || ib);
        }
    }
    f64::from(inter) / f64::from(union)
}

#[test]
fn iou_matches_sampled_area_ratio() {
    let mut rng = SplitMix64::new(0x10u64);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let a = random_box(&mut rng, 50.0, 1.0, 60.0);
        // half the pairs are forced to overlap
        let b = if rng.below(2) == 0 {
            random_box(&mut rng, 50.0, 1.0, 60.0)
        } else {
            let (cx, cy) = a.center();
            let (w, h) = (uniform(&mut rng, 1.0, 60.0), uniform(&mut rng, 1.0, 60.0));
            bx([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0])
        };
        let err = (iou(&a, &b) - sampled_iou(&a, &b, &mut rng)).abs();
        worst = worst.max(err);
        assert!(err < 0.02, "a={a:?} b={b:?} iou={} err={err}", iou(&a, &b));
    }
    assert!(worst > 0.0);
}

#[test]
fn eiou_terms_from_first_principles() {
    let mut rng = SplitMix64::new(77);
    for _ in 0..5_000 {
        let a = random_box(&mut rng, 100.0, 0.5, 40.0);
        let b = random_box(&mut rng, 100.0, 0.5, 40.0);
        let (ax, ay) = a.center();
        let (bx_, by) = b.center();
        let ex = a.xmax().max(b.xmax()) - a.xmin().min(b.xmin());
        let ey = a.ymax().max(b.ymax()) - a.ymin().min(b.ymin());
        let ix = (a.xmax().min(b.xmax()) - a.xmin().max(b.xmin())).max(0.0);
        let iy = (a.ymax().min(b.ymax()) - a.ymin().max(b.ymin())).max(0.0);
        let inter = ix * iy;
        let plain_iou = inter / (area(&a) + area(&b) - inter);
        let expected = plain_iou
            - ((ax - bx_).powi(2) + (ay - by).powi(2)) / (ex * ex + ey * ey)
            - (a.width() - b.width()).powi(2) / (ex * ex)
            - (a.height() - b.height()).powi(2) / (ey * ey);
        assert!((eiou(&a, &b) - expected).abs() < 1e-12);
        assert!(eiou(&a, &b) <= iou(&a, &b) + 1e-15);
        assert!(eiou(&a, &b) > -3.0);
        assert!((eiou(&a, &b) - eiou(&b, &a)).abs() < 1e-15);
    }
}

#[test]
fn remap_then_subtract_is_identity_when_unclipped() {
    let mut rng = SplitMix64::new(5);
    for _ in 0..2_000 {
        let t = TileWindow {
            id: 0,
            x0: rng.below(3000) as u32,
            y0: rng.below(3000) as u32,
            w: 640,
            h: 640,
        };
        let local = random_box(&mut rng, 500.0, 1.0, 100.0);
        let g = remap_to_global(&t, &local, 4096, 4096).unwrap();
        let back = g.translate(-f64::from(t.x0), -f64::from(t.y0)).unwrap();
        for (u, v) in back.to_array().iter().zip(local.to_array()) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
