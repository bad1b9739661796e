//! Synthetic report corpora with planted class signal, plus matching
//! fixture embeddings, for offline end-to-end runs.

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Channel, Deployment, ElectionReport, InfoType, Language};
use crate::embedprov::{FixtureRecord, SentimentTriple, EMBEDDING_DIM};
use crate::error::{Error, Result};

pub const SYNTH_MODEL_TAG: &str = "synthetic-768-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    /// Type signal in words, embeddings, sentiment and timing.
    Planted,
    /// Types differ only in when they are posted.
    TemporalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    /// Kenyan labels, all five types plus opinions.
    Kenya,
    /// Nigerian labels: four types, informative reports only.
    Nigeria,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_reports: usize,
    pub seed: u64,
    /// Seeds the class embedding centroids; corpora sharing it share class
    /// signatures.
    pub signature_seed: u64,
    pub mode: SignalMode,
    pub taxonomy: Taxonomy,
    pub deployment: String,
    pub election_date: NaiveDate,
    /// Share of Swahili reports.
    pub swahili_share: f64,
    /// Per-dimension embedding noise.
    pub embedding_noise: f64,
}

impl SynthConfig {
    pub fn kenya(n_reports: usize, seed: u64) -> Self {
        let d = Deployment::kenya_2022();
        SynthConfig {
            n_reports,
            seed,
            signature_seed: 7,
            mode: SignalMode::Planted,
            taxonomy: Taxonomy::Kenya,
            deployment: d.name,
            election_date: d.election_date,
            swahili_share: 0.3,
            embedding_noise: 0.5,
        }
    }

    pub fn nigeria(n_reports: usize, seed: u64) -> Self {
        let d = Deployment::nigeria_2023();
        SynthConfig {
            taxonomy: Taxonomy::Nigeria,
            deployment: d.name,
            election_date: d.election_date,
            swahili_share: 0.0,
            ..Self::kenya(n_reports, seed)
        }
    }

    pub fn temporal_only(mut self) -> Self {
        self.mode = SignalMode::TemporalOnly;
        self
    }

    /// The deployment whose taxonomy the generated raw labels use.
    pub fn deployment(&self) -> Deployment {
        match self.taxonomy {
            Taxonomy::Kenya => Deployment::kenya(self.deployment.clone(), self.election_date),
            Taxonomy::Nigeria => {
                let ng = Deployment::nigeria_2023();
                Deployment::new(
                    self.deployment.clone(),
                    self.election_date,
                    ng.taxonomy().map(|l| (l.to_string(), ng.target(l).unwrap())).collect::<Vec<_>>(),
                )
            }
        }
    }
}

/// Generated reports and one fixture record per report.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub reports: Vec<ElectionReport>,
    pub fixtures: Vec<FixtureRecord>,
    pub deployment: Deployment,
}

/// Joint classes: `None` is non-informative.
type Class = Option<InfoType>;

struct Profile {
    words_en: [&'static str; 12],
    words_sw: [&'static str; 12],
    /// Peak posting hour and signed day offset from election day.
    hour: u32,
    day: i64,
    /// Sentiment logits (positive, neutral, negative).
    mood: [f64; 3],
    share: f64,
}

fn profile(c: Class) -> Profile {
    match c {
        Some(InfoType::VotingIssues) => Profile {
            words_en: [
                "queue",
                "ballot",
                "voter",
                "register",
                "kiems",
                "polling",
                "clerk",
                "delayed",
                "list",
                "station",
                "identification",
                "turnout",
            ],
            words_sw: [
                "foleni",
                "kura",
                "mpiga",
                "daftari",
                "kituo",
                "karani",
                "kuchelewa",
                "orodha",
                "kitambulisho",
                "wapiga",
                "sanduku",
                "kupiga",
            ],
            hour: 7,
            day: 0,
            mood: [-0.5, 0.5, 0.5],
            share: 0.25,
        },
        Some(InfoType::SecurityIssues) => Profile {
            words_en: [
                "attack", "police", "violence", "injured", "teargas", "gunshots", "fight", "threat", "chaos",
                "stabbed", "goons", "clash",
            ],
            words_sw: [
                "shambulio",
                "polisi",
                "vurugu",
                "majeruhi",
                "risasi",
                "vita",
                "tishio",
                "fujo",
                "kuchomwa",
                "wahuni",
                "mapigano",
                "hatari",
            ],
            hour: 2,
            day: 3,
            mood: [-1.0, 0.0, 1.5],
            share: 0.12,
        },
        Some(InfoType::CountingResults) => Profile {
            words_en: [
                "tally",
                "results",
                "count",
                "form",
                "announced",
                "returning",
                "officer",
                "collation",
                "votes",
                "declared",
                "provisional",
                "verified",
            ],
            words_sw: [
                "hesabu",
                "matokeo",
                "kuhesabu",
                "fomu",
                "kutangazwa",
                "msimamizi",
                "afisa",
                "kujumlisha",
                "jumla",
                "kutangaza",
                "rasmi",
                "kuthibitishwa",
            ],
            hour: 19,
            day: 1,
            mood: [0.0, 1.0, 0.0],
            share: 0.13,
        },
        Some(InfoType::PositiveEvents) => Profile {
            words_en: [
                "peaceful",
                "calm",
                "smooth",
                "orderly",
                "commend",
                "successful",
                "cooperation",
                "praise",
                "organized",
                "efficient",
                "celebrate",
                "thank",
            ],
            words_sw: [
                "amani",
                "utulivu",
                "shwari",
                "pongezi",
                "mafanikio",
                "ushirikiano",
                "sifa",
                "mpangilio",
                "hongera",
                "shukrani",
                "furaha",
                "salama",
            ],
            hour: 11,
            day: -2,
            mood: [1.5, 0.0, -1.0],
            share: 0.10,
        },
        Some(InfoType::PoliticalRallies) => Profile {
            words_en: [
                "rally",
                "campaign",
                "supporters",
                "crowd",
                "aspirant",
                "address",
                "procession",
                "banner",
                "convoy",
                "stadium",
                "manifesto",
                "chanting",
            ],
            words_sw: [
                "mkutano", "kampeni", "wafuasi", "umati", "mgombea", "hotuba", "msafara", "bendera", "uwanja", "ilani",
                "nyimbo", "shangwe",
            ],
            hour: 15,
            day: -5,
            mood: [0.5, 0.5, 0.0],
            share: 0.05,
        },
        None => Profile {
            words_en: [
                "think", "hope", "god", "bless", "opinion", "believe", "country", "leaders", "pray", "future", "wish",
                "feel",
            ],
            words_sw: [
                "nadhani",
                "natumaini",
                "mungu",
                "baraka",
                "maoni",
                "naamini",
                "nchi",
                "viongozi",
                "omba",
                "baadaye",
                "tamani",
                "hisia",
            ],
            hour: 12,
            day: 0,
            mood: [0.3, 0.3, 0.3],
            share: 0.35,
        },
    }
}

const SHARED_EN: [&str; 16] = [
    "today", "area", "people", "report", "town", "county", "ward", "morning", "evening", "road", "near", "school",
    "centre", "market", "village", "many",
];
const SHARED_SW: [&str; 16] = [
    "leo", "eneo", "watu", "ripoti", "mji", "kaunti", "wadi", "asubuhi", "jioni", "barabara", "karibu", "shule",
    "kati", "soko", "kijiji", "wengi",
];

fn raw_label(c: Class, taxonomy: Taxonomy, rng: &mut ChaCha8Rng) -> &'static str {
    match (taxonomy, c) {
        (Taxonomy::Kenya, None) => "Opinions or Others",
        (Taxonomy::Kenya, Some(InfoType::VotingIssues)) => {
            ["Voting Issues", "Staffing Issues", "Polling Station Administration"].choose(rng).unwrap()
        }
        (Taxonomy::Kenya, Some(InfoType::SecurityIssues)) | (Taxonomy::Nigeria, Some(InfoType::SecurityIssues)) => {
            "Security Issues"
        }
        (Taxonomy::Kenya, Some(InfoType::CountingResults)) => "Counting and Results",
        (Taxonomy::Kenya, Some(InfoType::PositiveEvents)) | (Taxonomy::Nigeria, Some(InfoType::PositiveEvents)) => {
            "Positive Events"
        }
        (Taxonomy::Kenya, Some(InfoType::PoliticalRallies)) => "Political Rallies",
        (Taxonomy::Nigeria, Some(InfoType::VotingIssues)) => {
            ["Ballot Issues", "Polling Station Administration Issues"].choose(rng).unwrap()
        }
        (Taxonomy::Nigeria, Some(InfoType::CountingResults)) => "Sorting, Counting, and Collation",
        (Taxonomy::Nigeria, _) => unreachable!("class not in the Nigerian taxonomy"),
    }
}

fn classes(taxonomy: Taxonomy) -> Vec<Class> {
    match taxonomy {
        Taxonomy::Kenya => std::iter::once(None).chain(InfoType::ALL.map(Some)).collect(),
        Taxonomy::Nigeria => {
            [InfoType::VotingIssues, InfoType::CountingResults, InfoType::PositiveEvents, InfoType::SecurityIssues]
                .map(Some)
                .to_vec()
        }
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, norm: f64) -> Vec<f64> {
    let n = Normal::<f64>::new(0.0, norm / (EMBEDDING_DIM as f64).sqrt()).unwrap();
    (0..EMBEDDING_DIM).map(|_| n.sample(rng)).collect()
}

struct Signatures {
    common: Vec<f64>,
    informative: Vec<f64>,
    swahili: Vec<f64>,
    centroids: Vec<(Class, Vec<f64>)>,
}

impl Signatures {
    fn new(seed: u64) -> Signatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let common = gaussian_vector(&mut rng, 1.0);
        let informative = gaussian_vector(&mut rng, 2.0);
        let swahili = gaussian_vector(&mut rng, 0.5);
        let centroids = classes(Taxonomy::Kenya).into_iter().map(|c| (c, gaussian_vector(&mut rng, 2.0))).collect();
        Signatures { common, informative, swahili, centroids }
    }

    fn centroid(&self, c: Class) -> &[f64] {
        &self.centroids.iter().find(|(k, _)| *k == c).unwrap().1
    }
}

/// Class counts by largest remainder over the class shares.
fn class_counts(cs: &[Class], n: usize) -> Vec<usize> {
    let shares: Vec<f64> = cs.iter().map(|c| profile(*c).share).collect();
    crate::eval::largest_remainder(n, &shares)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.n_reports == 0 {
        return Err(Error::Config("n_reports must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.swahili_share) || config.embedding_noise < 0.0 {
        return Err(Error::Config("invalid synthetic corpus parameters".into()));
    }
    let sig = Signatures::new(config.signature_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cs = classes(config.taxonomy);
    let mut plan: Vec<Class> =
        cs.iter().zip(class_counts(&cs, config.n_reports)).flat_map(|(c, n)| std::iter::repeat_n(*c, n)).collect();
    plan.shuffle(&mut rng);

    let planted = config.mode == SignalMode::Planted;
    let (hour_sd, day_sd) = if planted { (2.5, 1.5) } else { (1.0, 0.7) };
    let hour_noise = Normal::<f64>::new(0.0, hour_sd).unwrap();
    let day_noise = Normal::<f64>::new(0.0, day_sd).unwrap();
    let mood_noise = Normal::<f64>::new(0.0, 0.5).unwrap();
    let emb_noise = Normal::<f64>::new(0.0, config.embedding_noise.max(1e-12)).unwrap();
    let election = Utc.from_utc_datetime(&config.election_date.and_hms_opt(0, 0, 0).unwrap());
    let all_profiles: Vec<Profile> = cs.iter().map(|c| profile(*c)).collect();

    let mut reports = Vec::with_capacity(plan.len());
    let mut fixtures = Vec::with_capacity(plan.len());
    for (n, class) in plan.into_iter().enumerate() {
        let p = profile(class);
        let swahili = rng.gen_bool(config.swahili_share);
        let (own, shared) = if swahili { (&p.words_sw, &SHARED_SW) } else { (&p.words_en, &SHARED_EN) };

        let mut words: Vec<&str> = (0..rng.gen_range(4..=8)).map(|_| *shared.choose(&mut rng).unwrap()).collect();
        if planted {
            words.extend((0..rng.gen_range(2..=3)).map(|_| *own.choose(&mut rng).unwrap()));
            if rng.gen_bool(0.15) {
                let other = all_profiles.choose(&mut rng).unwrap();
                let pool = if swahili { &other.words_sw } else { &other.words_en };
                words.push(pool.choose(&mut rng).unwrap());
            }
        } else {
            // same word distribution for every class
            let other = all_profiles.choose(&mut rng).unwrap();
            let pool = if swahili { &other.words_sw } else { &other.words_en };
            words.extend((0..rng.gen_range(2..=3)).map(|_| *pool.choose(&mut rng).unwrap()));
        }
        words.shuffle(&mut rng);
        let mut text = words.join(" ");
        if rng.gen_bool(0.1) {
            text = format!("@observer{} {text}", rng.gen_range(1..50));
        }
        if rng.gen_bool(0.2) && config.taxonomy == Taxonomy::Kenya {
            text.push_str(" #KenyaDecides2022");
        }
        if rng.gen_bool(0.05) {
            text.push_str(" https://example.org/r");
        }
        text.push_str(&format!(" {}", n + 1));

        let (hour, day) = match class {
            Some(_) => (
                (p.hour as f64 + hour_noise.sample(&mut rng)).round().rem_euclid(24.0) as i64,
                p.day + day_noise.sample(&mut rng).round() as i64,
            ),
            None => (rng.gen_range(0..24), rng.gen_range(-7..=7)),
        };
        let timestamp =
            election + Duration::days(day) + Duration::hours(hour) + Duration::seconds(rng.gen_range(0..3600));

        let mut emb: Vec<f64> = sig.common.clone();
        if class.is_some() {
            emb.iter_mut().zip(&sig.informative).for_each(|(e, s)| *e += s);
        }
        if planted {
            emb.iter_mut().zip(sig.centroid(class)).for_each(|(e, s)| *e += s);
        }
        if swahili {
            emb.iter_mut().zip(&sig.swahili).for_each(|(e, s)| *e += s);
        }
        for e in emb.iter_mut() {
            *e = round6(*e + emb_noise.sample(&mut rng));
        }

        let mood = if planted { p.mood } else { [0.3, 0.3, 0.3] };
        let logits: Vec<f64> = mood.iter().map(|m| m + mood_noise.sample(&mut rng)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let (pos, neg) = (round6(logits[0].exp() / z), round6(logits[2].exp() / z));
        let sentiment = SentimentTriple::new(pos, 1.0 - pos - neg, neg)?;

        let id = format!("{}-{:05}", config.deployment, n + 1);
        fixtures.push(FixtureRecord::new(&text, emb, sentiment, SYNTH_MODEL_TAG));
        reports.push(ElectionReport {
            id,
            text,
            timestamp,
            channel: if rng.gen_bool(0.6) { Channel::Sms } else { Channel::Web },
            language: if swahili { Language::Sw } else { Language::En },
            deployment: config.deployment.clone(),
            raw_label: Some(raw_label(class, config.taxonomy, &mut rng).to_string()),
            has_media: rng.gen_bool(0.05),
        });
    }
    Ok(SynthCorpus { reports, fixtures, deployment: config.deployment() })
}
