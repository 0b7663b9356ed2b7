//! Deterministic synthetic corpus and stand-in network weights for
//! desk-scale runs.
//!
//! Scenes show two rendered figures: one in a blue robe and veil (Mary) and
//! one in a red-and-gold robe with wings and a halo (Gabriel). Content images
//! are simple portraits whose hair length and clothing palette differ by
//! gender.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    self, AnnotatedRecord, BoundingBox, Character, ContentRecord, DataError, Gender,
};
use crate::features::{BackboneHandle, PretrainSource};
use crate::imaging::resize_exact;
use crate::nets::resnet::ResNet50;
use crate::nets::vgg::random_pair;
use crate::nets::{images_to_tensor, NetError};

pub const ANNOTATED_MANIFEST: &str = "annotated.csv";
pub const CONTENT_MANIFEST: &str = "content.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub scenes: usize,
    pub content_per_gender: usize,
    pub scene_width: u32,
    pub scene_height: u32,
    pub content_size: u32,
    /// Every n-th record has no face box; 0 keeps all faces.
    pub faceless_every: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            scenes: 20,
            content_per_gender: 30,
            scene_width: 256,
            scene_height: 192,
            content_size: 96,
            faceless_every: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureCorpus {
    pub root: PathBuf,
    pub annotated: Vec<AnnotatedRecord>,
    pub contents: Vec<ContentRecord>,
}

impl FixtureCorpus {
    pub fn annotated_manifest(&self) -> PathBuf {
        self.root.join(ANNOTATED_MANIFEST)
    }

    pub fn content_manifest(&self) -> PathBuf {
        self.root.join(CONTENT_MANIFEST)
    }
}

type Colour = [f64; 3];

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: Colour) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img
                .put_pixel(x as u32, y as u32, Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8)));
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, c: Colour) {
        for y in (cy - ry).floor() as i64..=(cy + ry).ceil() as i64 {
            for x in (cx - rx).floor() as i64..=(cx + rx).ceil() as i64 {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    self.put(x, y, c);
                }
            }
        }
    }

    fn ring(&mut self, cx: f64, cy: f64, r: f64, width: f64, c: Colour) {
        for y in (cy - r).floor() as i64..=(cy + r).ceil() as i64 {
            for x in (cx - r).floor() as i64..=(cx + r).ceil() as i64 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r && d >= r - width {
                    self.put(x, y, c);
                }
            }
        }
    }

    /// Trapezoid with horizontal top and bottom edges centred on `cx`.
    fn trapezoid(&mut self, cx: f64, top: f64, bottom: f64, top_w: f64, bottom_w: f64, c: Colour) {
        for y in top.floor() as i64..=bottom.ceil() as i64 {
            let t = ((y as f64 - top) / (bottom - top)).clamp(0.0, 1.0);
            let half = (top_w + (bottom_w - top_w) * t) / 2.0;
            for x in (cx - half).floor() as i64..=(cx + half).ceil() as i64 {
                self.put(x, y, c);
            }
        }
    }

    fn triangle(&mut self, p: [(f64, f64); 3], c: Colour) {
        let min_x = p.iter().map(|q| q.0).fold(f64::MAX, f64::min).floor() as i64;
        let max_x = p.iter().map(|q| q.0).fold(f64::MIN, f64::max).ceil() as i64;
        let min_y = p.iter().map(|q| q.1).fold(f64::MAX, f64::min).floor() as i64;
        let max_y = p.iter().map(|q| q.1).fold(f64::MIN, f64::max).ceil() as i64;
        let edge = |a: (f64, f64), b: (f64, f64), x: f64, y: f64| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let (fx, fy) = (x as f64, y as f64);
                let e = [
                    edge(p[0], p[1], fx, fy),
                    edge(p[1], p[2], fx, fy),
                    edge(p[2], p[0], fx, fy),
                ];
                if e.iter().all(|&v| v >= 0.0) || e.iter().all(|&v| v <= 0.0) {
                    self.put(x, y, c);
                }
            }
        }
    }

    fn noise(&mut self, rng: &mut ChaCha8Rng, amp: f64) {
        for p in self.img.pixels_mut() {
            for ch in p.0.iter_mut() {
                let v = f64::from(*ch) + rng.random_range(-amp..=amp);
                *ch = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, c: Colour, amp: f64) -> Colour {
    c.map(|v| v + rng.random_range(-amp..=amp))
}

fn skin(rng: &mut ChaCha8Rng) -> Colour {
    let t = rng.random_range(0.0..1.0);
    [235.0 - 90.0 * t, 200.0 - 90.0 * t, 170.0 - 90.0 * t]
}

fn background(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Canvas {
    let top = jitter(rng, [150.0, 130.0, 100.0], 40.0);
    let bottom = jitter(rng, [110.0, 90.0, 70.0], 30.0);
    let img = RgbImage::from_fn(w, h, |_, y| {
        let t = f64::from(y) / f64::from(h.max(2) - 1);
        Rgb([0, 1, 2].map(|c| (top[c] * (1.0 - t) + bottom[c] * t).round().clamp(0.0, 255.0) as u8))
    });
    let mut canvas = Canvas { img };
    // an architectural column somewhere in the middle third
    let cx = rng.random_range(0.4..0.6) * f64::from(w);
    let col = jitter(rng, [190.0, 180.0, 160.0], 20.0);
    canvas.trapezoid(cx, 0.0, f64::from(h), 10.0, 10.0, col);
    canvas
}

/// Draws a figure centred at `cx` and returns (body box, face box).
fn figure(canvas: &mut Canvas, rng: &mut ChaCha8Rng, who: Character, cx: f64, scale: f64) -> (BoundingBox, BoundingBox) {
    let (w, h) = (f64::from(canvas.img.width()), f64::from(canvas.img.height()));
    let head_r = 9.0 * scale;
    let head_y = h * 0.22 + rng.random_range(-4.0..4.0);
    let feet = (head_y + 125.0 * scale).min(h - 2.0);
    let shoulder = head_y + head_r;
    let (mut min_x, mut max_x) = (cx - 24.0 * scale, cx + 24.0 * scale);
    match who {
        Character::Mary => {
            let robe = jitter(rng, [35.0, 60.0, 170.0], 20.0);
            let veil = jitter(rng, [25.0, 45.0, 150.0], 15.0);
            let under = jitter(rng, [170.0, 40.0, 40.0], 15.0);
            canvas.ellipse(cx, head_y + 2.0 * scale, head_r * 1.5, head_r * 1.6, veil);
            canvas.trapezoid(cx, shoulder, feet, 16.0 * scale, 48.0 * scale, robe);
            canvas.trapezoid(cx, shoulder + 8.0 * scale, feet, 4.0 * scale, 10.0 * scale, under);
        }
        Character::Gabriel => {
            let robe = jitter(rng, [190.0, 50.0, 40.0], 20.0);
            let gold = jitter(rng, [225.0, 185.0, 60.0], 15.0);
            let wing_span = 30.0 * scale;
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let tip = (cx + side * (wing_span + 16.0 * scale), head_y - 20.0 * scale);
            canvas.triangle(
                [(cx, shoulder), tip, (cx + side * 8.0 * scale, shoulder + 60.0 * scale)],
                gold,
            );
            min_x = min_x.min(tip.0);
            max_x = max_x.max(tip.0);
            canvas.ring(cx, head_y, head_r * 1.7, 2.5 * scale, gold);
            canvas.trapezoid(cx, shoulder, feet, 18.0 * scale, 44.0 * scale, robe);
            canvas.trapezoid(cx, shoulder, shoulder + 6.0 * scale, 18.0 * scale, 20.0 * scale, gold);
        }
    }
    let face = skin(rng);
    canvas.ellipse(cx, head_y, head_r * 0.85, head_r, face);
    canvas.ellipse(cx - head_r * 0.3, head_y - head_r * 0.15, 1.2, 1.2, [40.0, 30.0, 30.0]);
    canvas.ellipse(cx + head_r * 0.3, head_y - head_r * 0.15, 1.2, 1.2, [40.0, 30.0, 30.0]);

    let top = match who {
        Character::Gabriel => (head_y - 20.0 * scale).min(head_y - head_r * 1.7),
        Character::Mary => head_y - head_r * 1.6,
    };
    let clamp_box = |x0: f64, y0: f64, x1: f64, y1: f64| {
        let x0 = x0.floor().clamp(0.0, w - 1.0);
        let y0 = y0.floor().clamp(0.0, h - 1.0);
        let x1 = x1.ceil().clamp(x0 + 1.0, w);
        let y1 = y1.ceil().clamp(y0 + 1.0, h);
        BoundingBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32).expect("positive extent")
    };
    let body = clamp_box(min_x - 2.0, top - 2.0, max_x + 2.0, feet + 1.0);
    let face_box = clamp_box(cx - head_r * 1.3, head_y - head_r * 1.3, cx + head_r * 1.3, head_y + head_r * 1.3);
    (body, face_box)
}

pub fn render_scene(spec: &FixtureSpec, index: usize) -> (RgbImage, [(Character, BoundingBox, BoundingBox); 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1000).wrapping_add(index as u64));
    let mut canvas = background(&mut rng, spec.scene_width, spec.scene_height);
    let w = f64::from(spec.scene_width);
    let mary_left = rng.random_bool(0.5);
    let (mx, gx) = if mary_left { (0.25, 0.72) } else { (0.72, 0.25) };
    let scale = f64::from(spec.scene_height) / 192.0 * rng.random_range(0.9..1.1);
    let gcx = gx * w + rng.random_range(-6.0..6.0);
    let (gb, gf) = figure(&mut canvas, &mut rng, Character::Gabriel, gcx, scale);
    let mcx = mx * w + rng.random_range(-6.0..6.0);
    let (mb, mf) = figure(&mut canvas, &mut rng, Character::Mary, mcx, scale);
    canvas.noise(&mut rng, 8.0);
    (canvas.img, [(Character::Mary, mb, mf), (Character::Gabriel, gb, gf)])
}

pub fn render_portrait(spec: &FixtureSpec, gender: Gender, index: usize) -> RgbImage {
    let salt = if gender == Gender::Female { 1 } else { 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(7919).wrapping_add(index as u64 * 4 + salt));
    let s = spec.content_size;
    let base = jitter(&mut rng, [120.0, 140.0, 150.0], 60.0);
    let mut canvas = Canvas {
        img: RgbImage::from_pixel(s, s, Rgb(base.map(|v| v.clamp(0.0, 255.0) as u8))),
    };
    let f = f64::from(s) / 96.0;
    let cx = 48.0 * f + rng.random_range(-6.0..6.0) * f;
    let cy = 38.0 * f + rng.random_range(-4.0..4.0) * f;
    let hair = jitter(&mut rng, [60.0, 40.0, 25.0], 25.0);
    let clothes = match gender {
        Gender::Female => jitter(&mut rng, [200.0, 80.0, 140.0], 40.0),
        Gender::Male => jitter(&mut rng, [60.0, 90.0, 120.0], 35.0),
    };
    canvas.trapezoid(cx, 58.0 * f, 96.0 * f, 30.0 * f, 70.0 * f, clothes);
    if gender == Gender::Female {
        canvas.ellipse(cx, cy + 10.0 * f, 20.0 * f, 30.0 * f, hair);
    } else {
        canvas.ellipse(cx, cy - 8.0 * f, 16.0 * f, 10.0 * f, hair);
    }
    canvas.ellipse(cx, cy, 13.0 * f, 17.0 * f, skin(&mut rng));
    canvas.noise(&mut rng, 6.0);
    canvas.img
}

fn save(img: &RgbImage, path: &Path) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| DataError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    img.save(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

/// Writes scene and portrait images plus both manifests under `root`.
pub fn generate_corpus(root: &Path, spec: &FixtureSpec) -> Result<FixtureCorpus, DataError> {
    let mut annotated = Vec::new();
    for i in 0..spec.scenes {
        let (img, figures) = render_scene(spec, i);
        let rel = PathBuf::from(format!("scenes/scene_{i:03}.png"));
        save(&img, &root.join(&rel))?;
        for (who, body, face) in figures {
            let n = annotated.len() + 1;
            let keep_face = spec.faceless_every == 0 || n % spec.faceless_every != 0;
            annotated.push(AnnotatedRecord {
                image_id: format!("scene_{i:03}_{}", who.as_str().to_ascii_lowercase()),
                image_path: rel.clone(),
                character: who,
                body_box: body,
                face_box: keep_face.then_some(face),
            });
        }
    }
    let mut contents = Vec::new();
    for g in Gender::ALL {
        for i in 0..spec.content_per_gender {
            let rel = PathBuf::from(format!("content/{}_{i:03}.png", g.as_str()));
            save(&render_portrait(spec, g, i), &root.join(&rel))?;
            contents.push(ContentRecord {
                image_id: format!("{}_{i:03}", g.as_str()),
                image_path: rel,
                gender: g,
            });
        }
    }
    data::write_annotated(&root.join(ANNOTATED_MANIFEST), &annotated)?;
    data::write_content(&root.join(CONTENT_MANIFEST), &contents)?;
    Ok(FixtureCorpus {
        root: root.to_path_buf(),
        annotated,
        contents,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureWeights {
    pub backbone_object: PathBuf,
    pub backbone_face: PathBuf,
    pub encoder: PathBuf,
    pub decoder: PathBuf,
}

/// Body crops and portraits used to calibrate normalisation statistics.
pub fn calibration_images(corpus: &FixtureCorpus, limit: usize) -> Result<Vec<RgbImage>, DataError> {
    let mut out = Vec::new();
    for (r, c) in corpus.annotated.iter().zip(&corpus.contents).take(limit.div_ceil(2)) {
        let scene = data::load_rgb(&corpus.root.join(&r.image_path))?;
        out.push(data::crop_region(&scene, &r.body_box)?);
        out.push(data::load_rgb(&corpus.root.join(&c.image_path))?);
    }
    out.truncate(limit);
    Ok(out)
}

/// Seeded backbones for both pretraining sources and an encoder/decoder
/// pair, each calibrated on `calibration`, written under `dir`.
pub fn generate_weights(
    dir: &Path,
    seed: u64,
    input_size: u32,
    style_side: u32,
    calibration: &[RgbImage],
) -> Result<FixtureWeights, NetError> {
    std::fs::create_dir_all(dir).map_err(|source| NetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let out = FixtureWeights {
        backbone_object: dir.join("resnet50_object_recognition.safetensors"),
        backbone_face: dir.join("resnet50_face_identification.safetensors"),
        encoder: dir.join("adain_encoder.safetensors"),
        decoder: dir.join("adain_decoder.safetensors"),
    };
    for (k, (source, path)) in [
        (PretrainSource::ObjectRecognition, &out.backbone_object),
        (PretrainSource::FaceIdentification, &out.backbone_face),
    ]
    .into_iter()
    .enumerate()
    {
        let resized: Vec<RgbImage> = calibration.iter().map(|i| resize_exact(i, input_size, input_size)).collect();
        let refs: Vec<&RgbImage> = resized.iter().collect();
        let x = images_to_tensor(&refs, source.channel_mean(), 1.0)?;
        let mut net = ResNet50::random(seed.wrapping_add(k as u64 + 1))?;
        net.calibrate(&x)?;
        BackboneHandle::save(&net, source, path)?;
    }
    let side = style_side.max(8) / 8 * 8;
    let resized: Vec<RgbImage> = calibration.iter().map(|i| resize_exact(i, side, side)).collect();
    let refs: Vec<&RgbImage> = resized.iter().collect();
    let x = images_to_tensor(&refs, [0.0; 3], 1.0 / 255.0)?;
    let (enc, dec) = random_pair(seed.wrapping_add(11), &x)?;
    enc.params().save(&out.encoder, &Default::default())?;
    dec.params().save(&out.decoder, &Default::default())?;
    Ok(out)
}
