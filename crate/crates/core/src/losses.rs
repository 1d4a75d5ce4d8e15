//! Training objective: individual loss terms and the weighted totals.
//!
//! All ℓ1 and squared norms are means over batch and elements, so the loss
//! weights do not depend on image or code size.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mwgan_autograd::{Graph, Var};

use crate::config::LossWeights;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::style::domain_index;

/// Entries of a complete dual-way forward pass.
pub const BUNDLE_KEYS: [&str; 18] = [
    "input",
    "landmarks",
    "labels",
    "recon",
    "stylized",
    "style_encoded",
    "style_sampled",
    "style_reencoded",
    "content",
    "content_reencoded",
    "cycled",
    "latent_sampled",
    "latent_reencoded",
    "displacement",
    "landmarks_generated",
    "warped",
    "critic_scores",
    "identity_log_probs",
];

/// Names of the report terms, in CSV column order.
pub const TERM_NAMES: [&str; 15] = [
    "rec_x", "rec_s", "rec_z_l", "cyc_c", "cyc_x", "gan_x_G", "gan_x_D", "gan_l_G", "gan_l_D", "gan_z_G", "gan_z_D", "id_x",
    "id_l", "total_G", "total_D",
];

/// One named quantity of the forward pass.
///
/// `Pair` entries are indexed by domain for per-domain quantities (inputs,
/// reconstructions) and by direction (`[p→c, c→p]`) for translation
/// quantities; an absent side is `None`. `Group` entries hold lists of
/// critic or classifier outputs under descriptive keys.
#[derive(Clone, Debug)]
pub enum BundleEntry<'g> {
    Pair([Option<Var<'g>>; 2]),
    Labels([Vec<usize>; 2]),
    Group(BTreeMap<String, Vec<Var<'g>>>),
}

/// Named intermediate results of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardBundle<'g> {
    entries: BTreeMap<&'static str, BundleEntry<'g>>,
}

impl<'g> ForwardBundle<'g> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &'static str, entry: BundleEntry<'g>) {
        self.entries.insert(name, entry);
    }

    pub fn insert_pair(&mut self, name: &'static str, a: Option<Var<'g>>, b: Option<Var<'g>>) {
        self.insert(name, BundleEntry::Pair([a, b]));
    }

    pub fn remove(&mut self, name: &str) -> Option<BundleEntry<'g>> {
        self.entries.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&BundleEntry<'g>> {
        self.entries.get(name).ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn pair(&self, name: &str) -> Result<[Option<Var<'g>>; 2]> {
        match self.get(name)? {
            BundleEntry::Pair(p) => Ok(*p),
            _ => Err(Error::MissingEntry(format!("{name} (as a pair)"))),
        }
    }

    pub fn labels(&self) -> Result<&[Vec<usize>; 2]> {
        match self.get("labels")? {
            BundleEntry::Labels(l) => Ok(l),
            _ => Err(Error::MissingEntry("labels (as labels)".into())),
        }
    }

    pub fn group(&self, name: &str) -> Result<&BTreeMap<String, Vec<Var<'g>>>> {
        match self.get(name)? {
            BundleEntry::Group(g) => Ok(g),
            _ => Err(Error::MissingEntry(format!("{name} (as a group)"))),
        }
    }

    /// The graph all entries live on.
    pub fn graph(&self) -> Result<&'g Graph> {
        let [a, b] = self.pair("input")?;
        a.or(b).map(|v| v.graph()).ok_or_else(|| Error::MissingEntry("input".into()))
    }
}

fn same_shape(what: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { what, expected: a.shape(), got: b.shape() });
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_reconstruction<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    same_shape("l1 reconstruction", a, b)?;
    Ok(a.sub(b).abs().mean())
}

/// `Σ_k mean((1 - s_k)²)` over the listed fake-score tensors.
pub fn lsgan_generator<'g>(g: &'g Graph, fake: &[Var<'g>]) -> Var<'g> {
    sum(g, fake.iter().map(|s| s.neg().add_scalar(1.0).square().mean()))
}

/// `Σ_k mean((1 - r_k)²) + Σ_k mean(f_k²)`.
pub fn lsgan_discriminator<'g>(g: &'g Graph, real: &[Var<'g>], fake: &[Var<'g>]) -> Var<'g> {
    lsgan_generator(g, real).add(sum(g, fake.iter().map(|s| s.square().mean())))
}

/// Mean over the batch of `-log_probs[i, labels[i]]` for log-probabilities `[N, K]`.
pub fn identity_nll<'g>(log_probs: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let shape = log_probs.shape();
    let (n, k) = match shape[..] {
        [k] => (1, k),
        [n, k] => (n, k),
        _ => return Err(Error::Shape { what: "identity log-probabilities", expected: vec![labels.len(), 0], got: shape }),
    };
    if labels.len() != n {
        return Err(Error::Shape { what: "identity labels", expected: vec![n], got: vec![labels.len()] });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!("identity label {bad} out of range for {k} classes")));
    }
    let g = log_probs.graph();
    Ok(sum(g, labels.iter().enumerate().map(|(i, &y)| log_probs.select(i * k + y))).scale(-1.0 / n as f64))
}

fn sum<'g>(g: &'g Graph, terms: impl IntoIterator<Item = Var<'g>>) -> Var<'g> {
    terms.into_iter().reduce(|a, b| a.add(b)).unwrap_or_else(|| g.constant(mwgan_autograd::Tensor::scalar(0.0)))
}

/// Scalar value of every objective term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub rec_x: f64,
    pub rec_s: f64,
    pub rec_z_l: f64,
    pub cyc_c: f64,
    pub cyc_x: f64,
    pub gan_x_g: f64,
    pub gan_x_d: f64,
    pub gan_l_g: f64,
    pub gan_l_d: f64,
    pub gan_z_g: f64,
    pub gan_z_d: f64,
    pub id_x: f64,
    pub id_l: f64,
    pub total_g: f64,
    pub total_d: f64,
    /// Individual summands that were present, e.g. `cyc_x.p2c`.
    pub parts: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn values(&self) -> [f64; 15] {
        [
            self.rec_x,
            self.rec_s,
            self.rec_z_l,
            self.cyc_c,
            self.cyc_x,
            self.gan_x_g,
            self.gan_x_d,
            self.gan_l_g,
            self.gan_l_d,
            self.gan_z_g,
            self.gan_z_d,
            self.id_x,
            self.id_l,
            self.total_g,
            self.total_d,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        TERM_NAMES.iter().position(|&n| n == name).map(|i| self.values()[i])
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn csv_header() -> String {
        format!("step,{}", TERM_NAMES.join(","))
    }

    pub fn csv_row(&self, step: u64) -> String {
        let mut s = step.to_string();
        for v in self.values() {
            write!(s, ",{v:?}").unwrap();
        }
        s
    }

    /// Multi-line `name = value` listing for diagnostics.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (n, v) in TERM_NAMES.iter().zip(self.values()) {
            writeln!(s, "{n} = {v:?}").unwrap();
        }
        for (n, v) in &self.parts {
            writeln!(s, "  {n} = {v:?}").unwrap();
        }
        s
    }
}

/// Loss terms as graph nodes, ready for backpropagation, plus their values.
pub struct AssembledLosses<'g> {
    pub total_g: Var<'g>,
    pub total_d: Var<'g>,
    pub report: LossReport,
}

const SIDES: [&str; 2] = ["p2c", "c2p"];

struct Term<'g> {
    g: &'g Graph,
    name: &'static str,
    parts: Vec<(String, Var<'g>)>,
}

impl<'g> Term<'g> {
    fn new(g: &'g Graph, name: &'static str) -> Self {
        Self { g, name, parts: Vec::new() }
    }

    fn push(&mut self, part: impl AsRef<str>, v: Var<'g>) {
        self.parts.push((format!("{}.{}", self.name, part.as_ref()), v));
    }

    fn total(&self) -> Var<'g> {
        sum(self.g, self.parts.iter().map(|(_, v)| *v))
    }
}

/// Critic outputs under `group[key]`, or nothing if the key is absent.
fn scores<'a, 'g>(group: &'a BTreeMap<String, Vec<Var<'g>>>, key: &str) -> &'a [Var<'g>] {
    group.get(key).map(Vec::as_slice).unwrap_or(&[])
}

/// Evaluate every term present in `bundle` and form both weighted totals.
///
/// Pair sides that are `None` (the caricature→photo half of a single-way
/// model) contribute nothing and do not appear in `report.parts`.
pub fn assemble_losses<'g>(bundle: &ForwardBundle<'g>, w: &LossWeights) -> Result<AssembledLosses<'g>> {
    let g = bundle.graph()?;
    let l1_pairs = |name: &'static str, a: &str, b: &str, sides: [&str; 2]| -> Result<Term<'g>> {
        let (pa, pb) = (bundle.pair(a)?, bundle.pair(b)?);
        let mut t = Term::new(g, name);
        for i in 0..2 {
            if let (Some(x), Some(y)) = (pa[i], pb[i]) {
                t.push(sides[i], l1_reconstruction(x, y)?);
            }
        }
        Ok(t)
    };
    let domains = [Domain::Photo.as_str(), Domain::Caricature.as_str()];
    let rec_x = l1_pairs("rec_x", "recon", "input", domains)?;
    let rec_s = l1_pairs("rec_s", "style_reencoded", "style_sampled", SIDES)?;
    let rec_z_l = l1_pairs("rec_z_l", "latent_reencoded", "latent_sampled", SIDES)?;
    let cyc_x = l1_pairs("cyc_x", "cycled", "input", SIDES)?;
    // Content of the source input against the content re-encoded from its
    // translation; the pair sides already line up by direction.
    let cyc_c = l1_pairs("cyc_c", "content_reencoded", "content", SIDES)?;

    let critic = bundle.group("critic_scores")?;
    let mut gan = BTreeMap::new();
    for (family, name_g, name_d) in [("image", "gan_x_G", "gan_x_D"), ("landmark", "gan_l_G", "gan_l_D"), ("code", "gan_z_G", "gan_z_D")] {
        let mut tg = Term::new(g, name_g);
        let mut td = Term::new(g, name_d);
        let prefix = format!("{family}.");
        let targets: std::collections::BTreeSet<&str> = critic
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix))
            .filter_map(|k| k.rsplit_once('.').map(|(t, _)| t))
            .collect();
        for t in targets {
            let real = scores(critic, &format!("{prefix}{t}.real"));
            let fake = scores(critic, &format!("{prefix}{t}.fake"));
            if fake.is_empty() {
                continue;
            }
            tg.push(t, lsgan_generator(g, fake));
            td.push(t, lsgan_discriminator(g, real, fake));
        }
        gan.insert(name_g, tg);
        gan.insert(name_d, td);
    }

    let labels = bundle.labels()?;
    let id = bundle.group("identity_log_probs")?;
    let mut id_terms = Vec::new();
    for (family, name) in [("image", "id_x"), ("landmark", "id_l")] {
        let mut t = Term::new(g, name);
        for d in Domain::BOTH {
            for (k, lp) in scores(id, &format!("{family}.{d}")).iter().enumerate() {
                let kind = if k == 0 { "real" } else { "generated" };
                t.push(format!("{d}.{kind}"), identity_nll(*lp, &labels[domain_index(d)])?);
            }
        }
        id_terms.push(t);
    }
    let [id_x, id_l] = <[Term; 2]>::try_from(id_terms).ok().expect("two identity families");

    let v = |t: &Term<'g>| t.total();
    let (rx, rs, rz, cc, cx) = (v(&rec_x), v(&rec_s), v(&rec_z_l), v(&cyc_c), v(&cyc_x));
    let (ix, il) = (v(&id_x), v(&id_l));
    let gt = |n: &str| v(&gan[n]);
    let (gxg, gxd, glg, gld, gzg, gzd) = (gt("gan_x_G"), gt("gan_x_D"), gt("gan_l_G"), gt("gan_l_D"), gt("gan_z_G"), gt("gan_z_D"));

    let shared = ix.scale(w.id_image).add(il.scale(w.id_landmark));
    let total_g = rx
        .scale(w.rec)
        .add(rs.add(rz).add(cc).add(cx).scale(w.cycle))
        .add(shared)
        .add(gxg.add(glg).add(gzg).scale(w.adversarial));
    let total_d = shared.add(gxd.add(gld).add(gzd).scale(w.adversarial));

    let mut parts = BTreeMap::new();
    for t in [&rec_x, &rec_s, &rec_z_l, &cyc_c, &cyc_x, &id_x, &id_l].into_iter().chain(gan.values()) {
        for (n, p) in &t.parts {
            parts.insert(n.clone(), p.item());
        }
    }
    let report = LossReport {
        rec_x: rx.item(),
        rec_s: rs.item(),
        rec_z_l: rz.item(),
        cyc_c: cc.item(),
        cyc_x: cx.item(),
        gan_x_g: gxg.item(),
        gan_x_d: gxd.item(),
        gan_l_g: glg.item(),
        gan_l_d: gld.item(),
        gan_z_g: gzg.item(),
        gan_z_d: gzd.item(),
        id_x: ix.item(),
        id_l: il.item(),
        total_g: total_g.item(),
        total_d: total_d.item(),
        parts,
    };
    Ok(AssembledLosses { total_g, total_d, report })
}
