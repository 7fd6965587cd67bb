"""Dataset download script. Fetches the original release archives of FB15K and WN18."""

import io
import tarfile
import time
from pathlib import Path

import requests

from func.base_logger import logger
from data.configs import DatasetInfo
from data.exceptions import DataError, UsageError


def fetch_archive(url: str) -> bytes:
    """
    Downloads an archive, retrying with exponential back-off.
    :param url: Archive URL.
    :return: Archive bytes.
    """
    attempts = 0

    while attempts < DatasetInfo.MAX_DOWNLOAD_ATTEMPTS:
        try:
            response = requests.get(url=url, headers=DatasetInfo.USER_AGENT_HEADER, timeout=120)
            response.raise_for_status()
            logger.info(f"Downloaded {len(response.content)} bytes from {url}")
            return response.content

        except requests.RequestException as request_exc:
            logger.warning(f"Download failed, retrying after {2 ** attempts} seconds. Error: " + str(request_exc))
            time.sleep(2 ** attempts)
            attempts += 1

    logger.critical(f"There were {attempts} failed download attempts for {url}. Giving up.")
    raise DataError(f"Could not download {url}")


def extract_splits(archive: bytes, members: dict, data_dir: Path) -> dict[str, Path]:
    """
    Extracts the split members of a tar archive as train.txt / valid.txt / test.txt.
    :param archive: Archive bytes (gzip-compressed tar).
    :param members: Split name -> member path inside the archive.
    :param data_dir: Target directory.
    :return: Split name -> written path.
    """
    data_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    with tarfile.open(fileobj=io.BytesIO(archive), mode='r:*') as tar:
        for split_name, member_name in members.items():
            try:
                member = tar.extractfile(member_name)
            except KeyError as e:
                raise DataError(f"Archive has no member {member_name}") from e
            if member is None:
                raise DataError(f"Archive member {member_name} is not a file")
            target = data_dir.joinpath(DatasetInfo.SPLIT_FILES[split_name])
            target.write_bytes(member.read())
            written[split_name] = target
    return written


def download_dataset(name: str, data_dir: Path) -> dict[str, Path]:
    """
    Downloads a benchmark dataset into data_dir.
    :param name: 'fb15k' or 'wn18'.
    :param data_dir: Target directory.
    :return: Split name -> written path.
    """
    name = name.casefold()
    if name not in DatasetInfo.ARCHIVES:
        raise UsageError(f"Unknown dataset {name!r}, choose from {sorted(DatasetInfo.ARCHIVES)}")
    info = DatasetInfo.ARCHIVES[name]
    archive = fetch_archive(info['url'])
    written = extract_splits(archive, info['members'], Path(data_dir))
    logger.info(f"Dataset {name} written to {data_dir}")
    return written
