use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use clap::Args;
use sentiscope_core::{jsonl, DisasterType, ImageId, ImageRecord};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::config::{parse_config, CliConfig};
use crate::error::{CliError, Result};
use crate::workspace::{self, create_file, write_bytes};

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of images, one subdirectory per disaster type.
    pub image_dir: PathBuf,

    /// `subdirectory = disaster_type` lines for subdirectories not named after a type.
    #[arg(long)]
    pub type_map: Option<PathBuf>,

    /// Assign this disaster type to every image, ignoring subdirectories.
    #[arg(long)]
    pub disaster_type: Option<String>,
}

/// Lowercase hex of the first 16 bytes of the SHA-256 digest.
pub fn content_id(bytes: &[u8]) -> ImageId {
    let digest = Sha256::digest(bytes);
    ImageId::new(digest[..16].iter().map(|b| format!("{b:02x}")).collect::<String>())
}

struct TypeResolver {
    fixed: Option<DisasterType>,
    map: HashMap<String, DisasterType>,
}

impl TypeResolver {
    fn new(args: &IngestArgs) -> Result<Self> {
        let fixed = args.disaster_type.as_deref().map(str::parse).transpose()?;
        let mut map = HashMap::new();
        if let Some(path) = &args.type_map {
            let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
            for (dir, ty) in parse_config(&text, path)? {
                map.insert(dir, ty.parse()?);
            }
        }
        Ok(Self { fixed, map })
    }

    fn resolve(&self, rel: &Path) -> Result<DisasterType> {
        if let Some(t) = self.fixed {
            return Ok(t);
        }
        let mut comps = rel.components();
        let dir = match (comps.next(), comps.next()) {
            (Some(first), Some(_)) => first.as_os_str().to_string_lossy().into_owned(),
            _ => {
                return Err(CliError::Invalid(format!(
                    "{} is not inside a disaster-type subdirectory; use --disaster-type",
                    rel.display()
                )))
            }
        };
        if let Some(t) = self.map.get(&dir) {
            return Ok(*t);
        }
        dir.parse().map_err(|_| {
            CliError::Invalid(format!(
                "subdirectory {dir:?} does not name a disaster type ({}); map it with --type-map",
                DisasterType::ALL.map(|d| d.as_str()).join(", ")
            ))
        })
    }
}

pub fn run(cfg: &CliConfig, args: &IngestArgs) -> Result<()> {
    let root = &args.image_dir;
    if !root.is_dir() {
        return Err(CliError::Io {
            context: format!("image directory {}", root.display()),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let resolver = TypeResolver::new(args)?;
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io {
            context: format!("walking {}", root.display()),
            source: e.into(),
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(CliError::Invalid(format!("{} contains no files", root.display())));
    }

    let manifest = cfg.manifest_path();
    let manifest_dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let images_dir = cfg.workspace.join(workspace::IMAGES_DIR);
    let mut records: BTreeMap<ImageId, ImageRecord> = BTreeMap::new();
    let mut first_seen: HashMap<ImageId, PathBuf> = HashMap::new();
    let mut skipped: Vec<(PathBuf, String)> = Vec::new();

    for path in files {
        let rel = path.strip_prefix(root).unwrap_or(&path).to_path_buf();
        let disaster_type = resolver.resolve(&rel)?;
        let bytes = std::fs::read(&path).map_err(CliError::io(format!("reading {}", path.display())))?;
        let format = match image::guess_format(&bytes)
            .and_then(|f| image::load_from_memory_with_format(&bytes, f).map(|_| f))
        {
            Ok(f) => f,
            Err(e) => {
                skipped.push((rel, format!("not a decodable image: {e}")));
                continue;
            }
        };
        let image_id = content_id(&bytes);
        if let Some(original) = first_seen.get(&image_id) {
            skipped.push((rel, format!("same content as {}", original.display())));
            continue;
        }
        first_seen.insert(image_id.clone(), rel);
        let file_name = format!("{image_id}.{}", format.extensions_str()[0]);
        let dest = images_dir.join(&file_name);
        write_bytes(&dest, &bytes)?;
        let uri = if manifest_dir == cfg.workspace {
            format!("{}/{file_name}", workspace::IMAGES_DIR)
        } else {
            std::path::absolute(&dest)
                .map_err(CliError::io(format!("resolving {}", dest.display())))?
                .to_string_lossy()
                .into_owned()
        };
        records.insert(
            image_id.clone(),
            ImageRecord {
                image_id,
                uri,
                disaster_type,
            },
        );
    }

    let skip_path = cfg.workspace.join(workspace::SKIP_REPORT);
    let mut w = csv_writer(&skip_path)?;
    w.write_record(["path", "reason"]).map_err(csv_err(&skip_path))?;
    for (p, reason) in &skipped {
        w.write_record([p.to_string_lossy().as_ref(), reason.as_str()])
            .map_err(csv_err(&skip_path))?;
    }
    w.flush().map_err(CliError::io(format!("writing {}", skip_path.display())))?;

    if records.is_empty() {
        return Err(CliError::Invalid(format!(
            "no decodable images in {}; see {}",
            root.display(),
            skip_path.display()
        )));
    }
    let records: Vec<ImageRecord> = records.into_values().collect();
    create_file(&manifest)?;
    jsonl::write(&manifest, &records)?;
    let types: std::collections::BTreeSet<_> = records.iter().map(|r| r.disaster_type).collect();
    println!(
        "ingested {} images across {} disaster types into {} ({} skipped, see {})",
        records.len(),
        types.len(),
        manifest.display(),
        skipped.len(),
        skip_path.display()
    );
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_writer(create_file(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        context: format!("writing {}", path.display()),
        source: e.into(),
    }
}
